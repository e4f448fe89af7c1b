//! Loading and joining of the per-sample inputs.
//!
//! Four sources feed the audit: a manifest of person crops, pose-estimator
//! keypoints, per-model gender predictions and the crop images themselves.
//! Every loader validates its rows up front so that the later stages can work
//! on plain, already-checked records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of COCO body keypoints produced by the pose estimator.
pub const NUM_KEYPOINTS: usize = 17;

/// Length of the flat `(x, y, conf)` keypoint vector.
pub const KEYPOINT_VECTOR_LEN: usize = NUM_KEYPOINTS * 3;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: row {row}: {message}", path.display())]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("duplicate sample_id {0:?}")]
    DuplicateId(String),
    #[error("sample {sample_id:?}: expected {KEYPOINT_VECTOR_LEN} keypoint numbers, got {got}")]
    WrongArity { sample_id: String, got: usize },
    #[error("sample {0:?}: non-finite keypoint coordinate")]
    NonFinite(String),
    #[error("duplicate prediction for model {model_id:?}, sample {sample_id:?}")]
    DuplicatePair { model_id: String, sample_id: String },
    #[error("cannot decode {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },
    #[error("unsupported image format: {}", .0.display())]
    UnsupportedFormat(PathBuf),
    #[error("no sample is present in every input source")]
    EmptyJoin,
}

impl IngestError {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            IngestError::MissingFile(_) => "MissingFile",
            IngestError::Io { .. } => "Io",
            IngestError::Parse { .. } => "ParseError",
            IngestError::DuplicateId(_) => "DuplicateId",
            IngestError::WrongArity { .. } => "WrongArity",
            IngestError::NonFinite(_) => "NonFinite",
            IngestError::DuplicatePair { .. } => "DuplicatePair",
            IngestError::Decode { .. } => "DecodeError",
            IngestError::UnsupportedFormat(_) => "UnsupportedFormat",
            IngestError::EmptyJoin => "EmptyJoin",
        }
    }
}

pub type Result<T> = std::result::Result<T, IngestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Binary gender label. Encoded as `0 = female`, `1 = male` in every file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn code(self) -> u8 {
        match self {
            Gender::Female => 0,
            Gender::Male => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Gender> {
        match code {
            0 => Some(Gender::Female),
            1 => Some(Gender::Male),
            _ => None,
        }
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "0" => Ok(Gender::Female),
            "1" => Ok(Gender::Male),
            other => Err(format!("gender label must be 0 or 1, got {other:?}")),
        }
    }
}

/// One person-crop sample listed in a manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub sample_id: String,
    /// Image path. Relative manifest entries are resolved against the
    /// manifest's directory.
    pub path: PathBuf,
    pub dataset: String,
    pub split: Split,
    pub gender_gt: Gender,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    sample_id: String,
    path: String,
    dataset: String,
    split: String,
    gender_gt: String,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IngestError::MissingFile(path.to_path_buf())
        } else {
            IngestError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })
}

fn csv_reader(path: &Path, expected: &[&str]) -> Result<csv::Reader<File>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let headers = reader.headers().map_err(|e| IngestError::Parse {
        path: path.to_path_buf(),
        row: 0,
        message: e.to_string(),
    })?;
    for column in expected {
        if !headers.iter().any(|h| h == *column) {
            return Err(IngestError::Parse {
                path: path.to_path_buf(),
                row: 0,
                message: format!("header is missing column {column:?}"),
            });
        }
    }
    Ok(reader)
}

/// Parses a manifest CSV (`sample_id,path,dataset,split,gender_gt`).
///
/// Rows are numbered from 1 (the header is row 0) in parse errors.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv_reader(path, &["sample_id", "path", "dataset", "split", "gender_gt"])?;

    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for (index, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row_no = index + 1;
        let parse_err = |message: String| IngestError::Parse {
            path: path.to_path_buf(),
            row: row_no,
            message,
        };
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        if row.sample_id.is_empty() {
            return Err(parse_err("empty sample_id".into()));
        }
        if row.path.is_empty() {
            return Err(parse_err("empty path".into()));
        }
        let split = row.split.parse().map_err(parse_err)?;
        let gender_gt = row.gender_gt.parse().map_err(parse_err)?;
        if !seen.insert(row.sample_id.clone()) {
            return Err(IngestError::DuplicateId(row.sample_id));
        }
        let image_path = PathBuf::from(&row.path);
        let image_path = if image_path.is_relative() {
            base.join(image_path)
        } else {
            image_path
        };
        records.push(ImageRecord {
            sample_id: row.sample_id,
            path: image_path,
            dataset: row.dataset,
            split,
            gender_gt,
        });
    }
    Ok(records)
}

/// COCO keypoint order as emitted by the pose estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum KeypointName {
    Nose = 0,
    LeftEye,
    RightEye,
    LeftEar,
    RightEar,
    LeftShoulder,
    RightShoulder,
    LeftElbow,
    RightElbow,
    LeftWrist,
    RightWrist,
    LeftHip,
    RightHip,
    LeftKnee,
    RightKnee,
    LeftAnkle,
    RightAnkle,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub conf: f64,
}

/// The 17 COCO keypoints of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    points: [Keypoint; NUM_KEYPOINTS],
}

impl KeypointSet {
    /// Builds a set from 17 keypoints, rejecting non-finite coordinates or
    /// confidences outside `[0, 1]`.
    pub fn new(points: [Keypoint; NUM_KEYPOINTS]) -> std::result::Result<Self, String> {
        for (i, p) in points.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(format!("keypoint {i} has a non-finite coordinate"));
            }
            if !(0.0..=1.0).contains(&p.conf) {
                return Err(format!("keypoint {i} confidence {} outside [0, 1]", p.conf));
            }
        }
        Ok(KeypointSet { points })
    }

    /// Reshapes a flat `(x0, y0, c0, ..., x16, y16, c16)` vector. Confidences
    /// outside `[0, 1]` are clamped; the number of clamped values is returned
    /// alongside the set.
    pub fn from_flat(values: &[f64]) -> std::result::Result<(Self, usize), FlatError> {
        if values.len() != KEYPOINT_VECTOR_LEN {
            return Err(FlatError::WrongArity(values.len()));
        }
        let mut clamped = 0;
        let mut points = [Keypoint::default(); NUM_KEYPOINTS];
        for (point, chunk) in points.iter_mut().zip(values.chunks_exact(3)) {
            let (x, y, conf) = (chunk[0], chunk[1], chunk[2]);
            if !x.is_finite() || !y.is_finite() || conf.is_nan() {
                return Err(FlatError::NonFinite);
            }
            let c = conf.clamp(0.0, 1.0);
            if c != conf {
                clamped += 1;
            }
            *point = Keypoint { x, y, conf: c };
        }
        Ok((KeypointSet { points }, clamped))
    }

    pub fn get(&self, name: KeypointName) -> Keypoint {
        self.points[name as usize]
    }

    pub fn points(&self) -> &[Keypoint; NUM_KEYPOINTS] {
        &self.points
    }

    /// Applies `f` to every keypoint position, keeping confidences.
    pub fn map_positions(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> KeypointSet {
        let mut points = self.points;
        for p in points.iter_mut() {
            let (x, y) = f(p.x, p.y);
            p.x = x;
            p.y = y;
        }
        KeypointSet { points }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlatError {
    WrongArity(usize),
    NonFinite,
}

/// Keypoints keyed by sample id, with load-time accounting.
#[derive(Debug, Clone, Default)]
pub struct KeypointTable {
    pub sets: BTreeMap<String, KeypointSet>,
    /// Number of confidence values clamped into `[0, 1]`.
    pub clamped: usize,
    /// Entries dropped because another detection for the same image had a
    /// higher score.
    pub duplicates: usize,
}

#[derive(Debug, Deserialize)]
struct KeypointEntry {
    image_id: String,
    keypoints: Vec<f64>,
    #[serde(default)]
    score: Option<f64>,
}

/// Loads a pose-estimator JSON file: an array of
/// `{"image_id": str, "keypoints": [51 numbers], "score": number}`.
///
/// When an image has several detections the highest-scoring one is kept.
pub fn load_keypoints(path: impl AsRef<Path>) -> Result<KeypointTable> {
    let path = path.as_ref();
    let entries: Vec<KeypointEntry> = serde_json::from_reader(BufReader::new(open(path)?))
        .map_err(|e| IngestError::Parse {
            path: path.to_path_buf(),
            row: e.line(),
            message: e.to_string(),
        })?;

    let mut table = KeypointTable::default();
    let mut best_score: BTreeMap<String, f64> = BTreeMap::new();
    for entry in entries {
        let (set, clamped) = KeypointSet::from_flat(&entry.keypoints).map_err(|e| match e {
            FlatError::WrongArity(got) => IngestError::WrongArity {
                sample_id: entry.image_id.clone(),
                got,
            },
            FlatError::NonFinite => IngestError::NonFinite(entry.image_id.clone()),
        })?;
        let score = entry.score.unwrap_or(0.0);
        match best_score.get(&entry.image_id) {
            Some(&previous) => {
                table.duplicates += 1;
                if score > previous {
                    best_score.insert(entry.image_id.clone(), score);
                    table.sets.insert(entry.image_id, set);
                }
            }
            None => {
                table.clamped += clamped;
                best_score.insert(entry.image_id.clone(), score);
                table.sets.insert(entry.image_id, set);
            }
        }
    }
    if table.clamped > 0 {
        log::warn!(
            "{}: clamped {} keypoint confidences into [0, 1]",
            path.display(),
            table.clamped
        );
    }
    Ok(table)
}

/// Binary gender predictions of several models, keyed by model then sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionTable {
    by_model: BTreeMap<String, BTreeMap<String, Gender>>,
}

impl PredictionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model_id: &str, sample_id: &str, pred: Gender) -> Result<()> {
        let samples = self.by_model.entry(model_id.to_string()).or_default();
        if samples.insert(sample_id.to_string(), pred).is_some() {
            return Err(IngestError::DuplicatePair {
                model_id: model_id.to_string(),
                sample_id: sample_id.to_string(),
            });
        }
        Ok(())
    }

    /// Merges another table, rejecting overlapping `(model, sample)` pairs.
    pub fn merge(&mut self, other: PredictionTable) -> Result<()> {
        for (model, samples) in other.by_model {
            for (sample, pred) in samples {
                self.insert(&model, &sample, pred)?;
            }
        }
        Ok(())
    }

    pub fn model_ids(&self) -> impl Iterator<Item = &str> {
        self.by_model.keys().map(String::as_str)
    }

    pub fn num_models(&self) -> usize {
        self.by_model.len()
    }

    pub fn len(&self) -> usize {
        self.by_model.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, model_id: &str, sample_id: &str) -> Option<Gender> {
        self.by_model.get(model_id)?.get(sample_id).copied()
    }

    pub fn model(&self, model_id: &str) -> Option<&BTreeMap<String, Gender>> {
        self.by_model.get(model_id)
    }

    /// Predictions of every model for one sample, in model order. `None` if
    /// any model lacks the sample.
    pub fn for_sample(&self, sample_id: &str) -> Option<Vec<(String, Gender)>> {
        self.by_model
            .iter()
            .map(|(model, samples)| samples.get(sample_id).map(|p| (model.clone(), *p)))
            .collect()
    }

    /// Sample ids mentioned by at least one model.
    pub fn sample_ids(&self) -> BTreeSet<&str> {
        self.by_model
            .values()
            .flat_map(|s| s.keys().map(String::as_str))
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    model_id: String,
    sample_id: String,
    gender_pred: String,
}

/// Parses a prediction CSV (`model_id,sample_id,gender_pred`).
pub fn load_predictions(path: impl AsRef<Path>) -> Result<PredictionTable> {
    let path = path.as_ref();
    let mut reader = csv_reader(path, &["model_id", "sample_id", "gender_pred"])?;
    let mut table = PredictionTable::new();
    for (index, row) in reader.deserialize::<PredictionRow>().enumerate() {
        let parse_err = |message: String| IngestError::Parse {
            path: path.to_path_buf(),
            row: index + 1,
            message,
        };
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        if row.model_id.is_empty() || row.sample_id.is_empty() {
            return Err(parse_err("empty model_id or sample_id".into()));
        }
        let pred = row.gender_pred.parse().map_err(parse_err)?;
        table.insert(&row.model_id, &row.sample_id, pred)?;
    }
    Ok(table)
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelBuffer {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl PixelBuffer {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> std::result::Result<Self, String> {
        if width == 0 || height == 0 {
            return Err(format!("empty image {width}x{height}"));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(format!(
                "buffer length {} does not match {width}x{height}x3 = {expected}",
                data.len()
            ));
        }
        Ok(PixelBuffer {
            width,
            height,
            data,
        })
    }

    /// An image filled with one colour.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self::new(width, height, data).expect("non-empty dimensions")
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data).expect("non-empty dimensions")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Copies the rectangle `[x, x + width) x [y, y + height)`.
    pub fn crop(&self, x: u32, y: u32, width: u32, height: u32) -> Option<PixelBuffer> {
        if width == 0
            || height == 0
            || x.checked_add(width)? > self.width
            || y.checked_add(height)? > self.height
        {
            return None;
        }
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for row in y..y + height {
            let start = (row as usize * self.width as usize + x as usize) * 3;
            data.extend_from_slice(&self.data[start..start + width as usize * 3]);
        }
        Some(PixelBuffer {
            width,
            height,
            data,
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> image::ImageResult<()> {
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
    }
}

/// Decodes a PNG or JPEG file into RGB. Grayscale and alpha sources are
/// converted, grayscale by replicating the single channel.
pub fn decode_image(path: impl AsRef<Path>) -> Result<PixelBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IngestError::MissingFile(path.to_path_buf())
        } else {
            IngestError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    let format = match image::guess_format(&bytes) {
        Ok(f @ (image::ImageFormat::Png | image::ImageFormat::Jpeg)) => f,
        Ok(_) => return Err(IngestError::UnsupportedFormat(path.to_path_buf())),
        Err(_) => {
            // Headers too short to sniff are treated as corrupt files of the
            // extension's format.
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase);
            match ext.as_deref() {
                Some("png" | "jpg" | "jpeg") => {
                    return Err(IngestError::Decode {
                        path: path.to_path_buf(),
                        message: "file too short to identify".into(),
                    })
                }
                _ => return Err(IngestError::UnsupportedFormat(path.to_path_buf())),
            }
        }
    };
    let decoded =
        image::load_from_memory_with_format(&bytes, format).map_err(|e| IngestError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let rgb = decoded.to_rgb8();
    let (width, height) = rgb.dimensions();
    PixelBuffer::new(width, height, rgb.into_raw()).map_err(|message| IngestError::Decode {
        path: path.to_path_buf(),
        message,
    })
}

/// One sample present in every input source.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub record: ImageRecord,
    pub keypoints: KeypointSet,
    /// `(model_id, prediction)` in model order; empty when no prediction
    /// table took part in the join.
    pub predictions: Vec<(String, Gender)>,
}

/// How many samples each source lost in the join.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JoinReport {
    /// Manifest samples without keypoints.
    pub missing_keypoints: Vec<String>,
    /// Manifest samples not predicted by every model.
    pub missing_predictions: Vec<String>,
    /// Keypoint entries whose id is not in the manifest.
    pub unknown_keypoints: Vec<String>,
    /// Predicted ids that are not in the manifest.
    pub unknown_predictions: Vec<String>,
}

impl JoinReport {
    pub fn dropped(&self) -> usize {
        self.missing_keypoints.len() + self.missing_predictions.len()
    }
}

/// Inner join of manifest, keypoints and (optionally) predictions on
/// sample id, sorted by sample id. Every dropped sample is listed in the
/// returned report.
pub fn join_records(
    manifest: &[ImageRecord],
    keypoints: &KeypointTable,
    predictions: Option<&PredictionTable>,
) -> Result<(Vec<SampleRow>, JoinReport)> {
    let mut report = JoinReport::default();
    let mut records: Vec<&ImageRecord> = manifest.iter().collect();
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

    let mut rows = Vec::new();
    for record in records {
        let Some(kp) = keypoints.sets.get(&record.sample_id) else {
            report.missing_keypoints.push(record.sample_id.clone());
            continue;
        };
        let preds = match predictions {
            Some(table) => match table.for_sample(&record.sample_id) {
                Some(p) if !p.is_empty() => p,
                _ => {
                    report.missing_predictions.push(record.sample_id.clone());
                    continue;
                }
            },
            None => Vec::new(),
        };
        rows.push(SampleRow {
            record: record.clone(),
            keypoints: kp.clone(),
            predictions: preds,
        });
    }

    let known: BTreeSet<&str> = manifest.iter().map(|r| r.sample_id.as_str()).collect();
    report.unknown_keypoints = keypoints
        .sets
        .keys()
        .filter(|id| !known.contains(id.as_str()))
        .cloned()
        .collect();
    if let Some(table) = predictions {
        report.unknown_predictions = table
            .sample_ids()
            .into_iter()
            .filter(|id| !known.contains(id))
            .map(str::to_string)
            .collect();
    }

    if rows.is_empty() {
        return Err(IngestError::EmptyJoin);
    }
    Ok((rows, report))
}
