//! Head region from ear keypoints, and face-crop export for frontal subjects.
//!
//! The head box is a square centred on the ear midpoint whose side is 2/9 of
//! the body height, which for pre-cropped pedestrian images is the crop
//! height. Corners are rounded to whole pixels and clamped to the image.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ingest::{Gender, KeypointName, KeypointSet, PixelBuffer};
use crate::subjfeat::Pose;

/// Head height as a fraction of the body height.
pub const HEAD_FRACTION: f64 = 2.0 / 9.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeadError {
    #[error("body height must be positive, got {0}")]
    InvalidBodyHeight(f64),
    #[error("head box is empty after clamping to the image")]
    DegenerateBox,
    #[error("cannot write {}: {message}", path.display())]
    Write { path: PathBuf, message: String },
}

impl HeadError {
    pub fn kind(&self) -> &'static str {
        match self {
            HeadError::InvalidBodyHeight(_) => "InvalidBodyHeight",
            HeadError::DegenerateBox => "DegenerateBox",
            HeadError::Write { .. } => "WriteError",
        }
    }
}

/// Midpoint of the two ears.
pub fn head_center(kp: &KeypointSet) -> (f64, f64) {
    let l = kp.get(KeypointName::LeftEar);
    let r = kp.get(KeypointName::RightEar);
    ((l.x + r.x) / 2.0, (l.y + r.y) / 2.0)
}

/// Square head box in pixel coordinates. `top_left` is inclusive and
/// `bottom_right` exclusive, so the crop spans `bottom_right - top_left`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadBox {
    pub center: (f64, f64),
    pub side: f64,
    pub top_left: (u32, u32),
    pub bottom_right: (u32, u32),
}

impl HeadBox {
    pub fn width(&self) -> u32 {
        self.bottom_right.0 - self.top_left.0
    }

    pub fn height(&self) -> u32 {
        self.bottom_right.1 - self.top_left.1
    }

    /// Corners before rounding and clamping.
    pub fn unclamped(&self) -> ((f64, f64), (f64, f64)) {
        let half = self.side / 2.0;
        (
            (self.center.0 - half, self.center.1 - half),
            (self.center.0 + half, self.center.1 + half),
        )
    }
}

pub fn head_box(
    kp: &KeypointSet,
    body_height: f64,
    image_width: u32,
    image_height: u32,
) -> Result<HeadBox, HeadError> {
    if !body_height.is_finite() || body_height <= 0.0 {
        return Err(HeadError::InvalidBodyHeight(body_height));
    }
    let center = head_center(kp);
    let side = body_height * HEAD_FRACTION;
    let half = side / 2.0;
    let clamp = |v: f64, max: u32| v.round().clamp(0.0, max as f64) as u32;
    let top_left = (
        clamp(center.0 - half, image_width),
        clamp(center.1 - half, image_height),
    );
    let bottom_right = (
        clamp(center.0 + half, image_width),
        clamp(center.1 + half, image_height),
    );
    if bottom_right.0 <= top_left.0 || bottom_right.1 <= top_left.1 {
        return Err(HeadError::DegenerateBox);
    }
    Ok(HeadBox {
        center,
        side,
        top_left,
        bottom_right,
    })
}

/// Crops the head box from an image whose full height is the body height.
pub fn crop_head(img: &PixelBuffer, kp: &KeypointSet) -> Result<(HeadBox, PixelBuffer), HeadError> {
    let hb = head_box(kp, img.height() as f64, img.width(), img.height())?;
    let crop = img
        .crop(hb.top_left.0, hb.top_left.1, hb.width(), hb.height())
        .ok_or(HeadError::DegenerateBox)?;
    Ok((hb, crop))
}

/// Input for one face-crop candidate.
pub struct HeadSample<'a> {
    pub sample_id: &'a str,
    pub gender_gt: Gender,
    pub pose: Pose,
    pub keypoints: &'a KeypointSet,
    pub image: &'a PixelBuffer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceRow {
    pub sample_id: String,
    pub face_path: PathBuf,
    pub gender_gt: Gender,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaceManifest {
    /// Written crops, sorted by sample id.
    pub rows: Vec<FaceRow>,
    /// Non-frontal samples and their pose.
    pub skipped: Vec<(String, Pose)>,
    /// Frontal samples whose crop failed.
    pub errors: Vec<(String, HeadError)>,
}

/// Writes one PNG crop per frontal sample into `out_dir` as
/// `<sample_id>.png`. Per-sample box failures are collected, not raised; a
/// failing write aborts the batch.
pub fn crop_heads(samples: &[HeadSample<'_>], out_dir: &Path) -> Result<FaceManifest, HeadError> {
    let write_err = |path: &Path, e: &dyn std::fmt::Display| HeadError::Write {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    fs::create_dir_all(out_dir).map_err(|e| write_err(out_dir, &e))?;

    let mut ordered: BTreeMap<&str, &HeadSample<'_>> = BTreeMap::new();
    for s in samples {
        ordered.insert(s.sample_id, s);
    }

    let mut manifest = FaceManifest::default();
    for (id, sample) in ordered {
        if sample.pose != Pose::Frontal {
            manifest.skipped.push((id.to_string(), sample.pose));
            continue;
        }
        match crop_head(sample.image, sample.keypoints) {
            Ok((_, crop)) => {
                let path = out_dir.join(format!("{}.png", sanitize(id)));
                crop.save_png(&path).map_err(|e| write_err(&path, &e))?;
                manifest.rows.push(FaceRow {
                    sample_id: id.to_string(),
                    face_path: path,
                    gender_gt: sample.gender_gt,
                });
            }
            Err(e) => manifest.errors.push((id.to_string(), e)),
        }
    }
    if manifest.rows.is_empty() {
        log::warn!("no face crops written to {}", out_dir.display());
    }
    Ok(manifest)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Keypoint, NUM_KEYPOINTS};

    fn ears(l: (f64, f64), r: (f64, f64)) -> KeypointSet {
        let mut points = [Keypoint::default(); NUM_KEYPOINTS];
        points[KeypointName::LeftEar as usize] = Keypoint { x: l.0, y: l.1, conf: 1.0 };
        points[KeypointName::RightEar as usize] = Keypoint { x: r.0, y: r.1, conf: 1.0 };
        KeypointSet::new(points).unwrap()
    }

    #[test]
    fn center_examples() {
        assert_eq!(head_center(&ears((40.0, 20.0), (60.0, 22.0))), (50.0, 21.0));
        assert_eq!(head_center(&ears((10.0, 10.0), (10.0, 10.0))), (10.0, 10.0));
        assert_eq!(head_center(&ears((0.0, 0.0), (100.0, 100.0))), (50.0, 50.0));
    }

    #[test]
    fn box_examples() {
        let kp = ears((40.0, 20.0), (60.0, 22.0));
        let hb = head_box(&kp, 180.0, 1000, 1000).unwrap();
        assert!((hb.side - 40.0).abs() < 1e-12);
        assert_eq!(hb.top_left, (30, 1));
        assert_eq!(hb.bottom_right, (70, 41));
        let ((x0, y0), (x1, y1)) = hb.unclamped();
        assert!((x0 - 30.0).abs() < 1e-12 && (y0 - 1.0).abs() < 1e-12);
        assert!((x1 - 70.0).abs() < 1e-12 && (y1 - 41.0).abs() < 1e-12);

        assert!((head_box(&kp, 90.0, 1000, 1000).unwrap().side - 20.0).abs() < 1e-12);

        let corner = ears((2.0, 2.0), (2.0, 2.0));
        let hb = head_box(&corner, 180.0, 100, 100).unwrap();
        assert_eq!(hb.top_left, (0, 0));
        assert_eq!(hb.bottom_right, (22, 22));
    }

    #[test]
    fn box_errors() {
        let kp = ears((-500.0, 10.0), (-500.0, 10.0));
        assert_eq!(head_box(&kp, 90.0, 100, 100), Err(HeadError::DegenerateBox));
        assert!(matches!(
            head_box(&kp, 0.0, 100, 100),
            Err(HeadError::InvalidBodyHeight(_))
        ));
    }

    #[test]
    fn crop_matches_box() {
        let img = PixelBuffer::from_fn(40, 90, |x, y| [x as u8, y as u8, (x + y) as u8]);
        let kp = ears((15.0, 12.0), (25.0, 12.0));
        let (hb, crop) = crop_head(&img, &kp).unwrap();
        assert_eq!((crop.width(), crop.height()), (hb.width(), hb.height()));
        for y in 0..crop.height() {
            for x in 0..crop.width() {
                assert_eq!(crop.pixel(x, y), img.pixel(x + hb.top_left.0, y + hb.top_left.1));
            }
        }
    }

    #[test]
    fn batch_accounting() {
        let dir = tempfile::tempdir().unwrap();
        let img = PixelBuffer::filled(40, 90, [9, 9, 9]);
        let good = ears((15.0, 12.0), (25.0, 12.0));
        let bad = ears((-500.0, 12.0), (-500.0, 12.0));
        let ids = ["e", "d", "c", "b", "a"];
        let poses = [Pose::Frontal, Pose::Frontal, Pose::Frontal, Pose::Backside, Pose::Backside];
        let samples: Vec<HeadSample<'_>> = ids
            .iter()
            .zip(poses)
            .map(|(id, pose)| HeadSample {
                sample_id: id,
                gender_gt: Gender::Male,
                pose,
                keypoints: &good,
                image: &img,
            })
            .collect();
        let m = crop_heads(&samples, dir.path()).unwrap();
        assert_eq!(m.rows.len(), 3);
        assert_eq!(m.skipped.len(), 2);
        assert_eq!(m.rows[0].sample_id, "c");
        assert!(m.rows.iter().all(|r| r.face_path.exists()));

        let mut samples = samples;
        samples[0].keypoints = &bad;
        let m = crop_heads(&samples, &dir.path().join("second")).unwrap();
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.errors, vec![("e".to_string(), HeadError::DegenerateBox)]);

        for s in &mut samples {
            s.pose = Pose::Sideways;
        }
        let m = crop_heads(&samples, &dir.path().join("third")).unwrap();
        assert!(m.rows.is_empty());
        assert_eq!(m.skipped.len(), 5);
    }
}
