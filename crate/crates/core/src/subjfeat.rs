//! Subject-based features: keypoint confidence per body region and a
//! three-way pose classification from shoulder and hip geometry.
//!
//! Image coordinates have their origin at the top-left corner. A subject
//! facing the camera shows its left shoulder on the right side of the image,
//! so "left shoulder is rightmost" means frontal.
//!
//! Pose is decided in two steps:
//!
//! 1. If the horizontal shoulder extent divided by the vertical distance
//!    between the shoulder and hip midpoints is below [`SIDEWAYS_RATIO`], the
//!    subject is sideways.
//! 2. Otherwise the subject is frontal when the left shoulder lies to the
//!    right of the right shoulder, and backside when it does not.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgfeat::ImageFeatures;
use crate::ingest::{Gender, ImageRecord, KeypointName, KeypointSet, Split};

/// Shoulder-width to torso-height ratio below which a subject is sideways.
pub const SIDEWAYS_RATIO: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseError {
    #[error("shoulder and hip midpoints share the same height")]
    DegenerateGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Face,
    Upper,
    Lower,
}

impl Region {
    pub fn keypoints(self) -> &'static [KeypointName] {
        use KeypointName::*;
        match self {
            Region::Face => &[Nose, LeftEye, RightEye, LeftEar, RightEar],
            Region::Upper => &[
                LeftShoulder,
                RightShoulder,
                LeftElbow,
                RightElbow,
                LeftWrist,
                RightWrist,
            ],
            Region::Lower => &[LeftHip, RightHip, LeftKnee, RightKnee, LeftAnkle, RightAnkle],
        }
    }
}

/// Arithmetic mean of the region's keypoint confidences.
pub fn region_confidence(kp: &KeypointSet, region: Region) -> f64 {
    let names = region.keypoints();
    names.iter().map(|&n| kp.get(n).conf).sum::<f64>() / names.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pose {
    Frontal,
    Sideways,
    Backside,
}

impl Pose {
    pub const ALL: [Pose; 3] = [Pose::Frontal, Pose::Sideways, Pose::Backside];

    /// Ordinal code fed to the surrogate: frontal 0, sideways 1, backside 2.
    pub fn code(self) -> u8 {
        match self {
            Pose::Frontal => 0,
            Pose::Sideways => 1,
            Pose::Backside => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Pose> {
        Pose::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pose::Frontal => "frontal",
            Pose::Sideways => "sideways",
            Pose::Backside => "backside",
        }
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pose {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "frontal" => Ok(Pose::Frontal),
            "sideways" => Ok(Pose::Sideways),
            "backside" => Ok(Pose::Backside),
            other => Err(format!("unknown pose {other:?}")),
        }
    }
}

pub fn classify_pose(kp: &KeypointSet) -> Result<Pose, PoseError> {
    let ls = kp.get(KeypointName::LeftShoulder);
    let rs = kp.get(KeypointName::RightShoulder);
    let lh = kp.get(KeypointName::LeftHip);
    let rh = kp.get(KeypointName::RightHip);

    let shoulder_length = (rs.x - ls.x).abs();
    let upper_height = ((ls.y + rs.y) / 2.0 - (lh.y + rh.y) / 2.0).abs();
    if upper_height == 0.0 {
        return Err(PoseError::DegenerateGeometry);
    }
    if shoulder_length / upper_height < SIDEWAYS_RATIO {
        return Ok(Pose::Sideways);
    }
    if ls.x > rs.x {
        Ok(Pose::Frontal)
    } else {
        Ok(Pose::Backside)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectFeatures {
    pub face_conf: f64,
    pub upper_conf: f64,
    pub lower_conf: f64,
    pub pose: Pose,
}

impl SubjectFeatures {
    pub fn compute(kp: &KeypointSet) -> Result<Self, PoseError> {
        Ok(SubjectFeatures {
            face_conf: region_confidence(kp, Region::Face),
            upper_conf: region_confidence(kp, Region::Upper),
            lower_conf: region_confidence(kp, Region::Lower),
            pose: classify_pose(kp)?,
        })
    }
}

/// The seven analysis features, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Feature {
    Resolution,
    Luminosity,
    Blurriness,
    FaceConf,
    UpperConf,
    LowerConf,
    Pose,
}

pub const NUM_FEATURES: usize = 7;

impl Feature {
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::Resolution,
        Feature::Luminosity,
        Feature::Blurriness,
        Feature::FaceConf,
        Feature::UpperConf,
        Feature::LowerConf,
        Feature::Pose,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Resolution => "resolution",
            Feature::Luminosity => "luminosity",
            Feature::Blurriness => "blurriness",
            Feature::FaceConf => "face_conf",
            Feature::UpperConf => "upper_conf",
            Feature::LowerConf => "lower_conf",
            Feature::Pose => "pose",
        }
    }

    pub fn from_index(i: usize) -> Option<Feature> {
        Feature::ALL.get(i).copied()
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| format!("unknown feature {s:?}"))
    }
}

/// One sample's analysis features plus its meta-label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub sample_id: String,
    pub dataset: String,
    pub split: Split,
    pub gender_gt: Gender,
    pub image: ImageFeatures,
    pub subject: SubjectFeatures,
    /// 1 when every model predicted the ground-truth gender.
    pub meta_label: u8,
}

impl FeatureRow {
    /// Feature vector in [`Feature::ALL`] order, pose as its ordinal code.
    pub fn values(&self) -> [f64; NUM_FEATURES] {
        [
            self.image.resolution,
            self.image.luminosity,
            self.image.blurriness,
            self.subject.face_conf,
            self.subject.upper_conf,
            self.subject.lower_conf,
            self.subject.pose.code() as f64,
        ]
    }

    pub fn value(&self, feature: Feature) -> f64 {
        self.values()[feature.index()]
    }
}

pub fn build_feature_row(
    record: &ImageRecord,
    image: ImageFeatures,
    subject: SubjectFeatures,
    meta_label: u8,
) -> FeatureRow {
    debug_assert!(meta_label <= 1);
    FeatureRow {
        sample_id: record.sample_id.clone(),
        dataset: record.dataset.clone(),
        split: record.split,
        gender_gt: record.gender_gt,
        image,
        subject,
        meta_label,
    }
}
