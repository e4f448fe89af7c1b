//! Seeded synthetic datasets in the on-disk input formats, for tests,
//! examples and smoke runs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::ingest::{KeypointName, PixelBuffer, NUM_KEYPOINTS};
use crate::subjfeat::Pose;

pub const DATASETS: [&str; 3] = ["PA-100K", "PETA", "RAP"];
pub const MODELS: [&str; 2] = ["model_a", "model_b"];

/// Paths of a generated dataset.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub keypoints: PathBuf,
    pub predictions: PathBuf,
}

/// Flat COCO keypoints of an upright person in a `w x h` crop.
pub fn standing_keypoints(w: f64, h: f64, pose: Pose, conf: impl Fn(usize) -> f64) -> Vec<f64> {
    let cx = w / 2.0;
    let shoulder = match pose {
        Pose::Frontal => 0.2 * w,
        Pose::Backside => -0.2 * w,
        Pose::Sideways => 0.03 * w,
    };
    let hip = shoulder * 0.6;
    let mut pts = [(0.0, 0.0); NUM_KEYPOINTS];
    use KeypointName::*;
    pts[Nose as usize] = (cx, 0.08 * h);
    pts[LeftEye as usize] = (cx + 0.03 * w, 0.07 * h);
    pts[RightEye as usize] = (cx - 0.03 * w, 0.07 * h);
    pts[LeftEar as usize] = (cx + 0.06 * w, 0.09 * h);
    pts[RightEar as usize] = (cx - 0.06 * w, 0.09 * h);
    pts[LeftShoulder as usize] = (cx + shoulder, 0.25 * h);
    pts[RightShoulder as usize] = (cx - shoulder, 0.25 * h);
    pts[LeftElbow as usize] = (cx + shoulder * 1.1, 0.4 * h);
    pts[RightElbow as usize] = (cx - shoulder * 1.1, 0.4 * h);
    pts[LeftWrist as usize] = (cx + shoulder * 1.1, 0.52 * h);
    pts[RightWrist as usize] = (cx - shoulder * 1.1, 0.52 * h);
    pts[LeftHip as usize] = (cx + hip, 0.55 * h);
    pts[RightHip as usize] = (cx - hip, 0.55 * h);
    pts[LeftKnee as usize] = (cx + hip, 0.75 * h);
    pts[RightKnee as usize] = (cx - hip, 0.75 * h);
    pts[LeftAnkle as usize] = (cx + hip, 0.95 * h);
    pts[RightAnkle as usize] = (cx - hip, 0.95 * h);
    pts.iter()
        .enumerate()
        .flat_map(|(i, &(x, y))| [x, y, conf(i)])
        .collect()
}

fn synth_image(rng: &mut ChaCha8Rng, w: u32, h: u32, noise_amp: f64) -> PixelBuffer {
    let noise: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..noise_amp)).collect();
    let base = rng.gen_range(40.0..100.0);
    PixelBuffer::from_fn(w, h, |x, y| {
        let n = noise[(y * w + x) as usize];
        let v = (base + n + 40.0 * y as f64 / h as f64).min(255.0) as u8;
        [v, v.saturating_sub(10), v / 2]
    })
}

/// Writes `n` samples spread over [`DATASETS`] into `root`: PNG images,
/// `manifest.csv`, `keypoints.json` and `predictions.csv` with the models
/// in [`MODELS`]. Output depends only on `n` and `seed`.
///
/// PETA images are small with strong pixel noise, RAP images large and
/// smooth. Models are more often right on larger images.
pub fn write_dataset(root: &Path, n: usize, seed: u64) -> io::Result<SyntheticDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = root.join("images");
    fs::create_dir_all(&images)?;

    let mut manifest = String::from("sample_id,path,dataset,split,gender_gt\n");
    let mut predictions = String::from("model_id,sample_id,gender_pred\n");
    let mut keypoints = Vec::new();
    for i in 0..n {
        let dataset = DATASETS[i % DATASETS.len()];
        let (w_range, noise_amp) = match dataset {
            "PETA" => (12..24, 120.0),
            "RAP" => (36..52, 25.0),
            _ => (20..36, 60.0),
        };
        let w: u32 = rng.gen_range(w_range);
        let h = 2 * w + rng.gen_range(0..8);
        let id = format!("s{i:04}");
        let img = synth_image(&mut rng, w, h, noise_amp);
        let rel = format!("images/{id}.png");
        img.save_png(root.join(&rel)).map_err(io::Error::other)?;

        let gender: u8 = rng.gen_range(0..2);
        let split = if i % 5 == 0 { "test" } else { "train" };
        manifest.push_str(&format!("{id},{rel},{dataset},{split},{gender}\n"));

        let pose = match rng.gen_range(0..10) {
            0..=5 => Pose::Frontal,
            6..=7 => Pose::Sideways,
            _ => Pose::Backside,
        };
        let confs: Vec<f64> = (0..NUM_KEYPOINTS).map(|_| rng.gen_range(0.3..1.0)).collect();
        let kp = standing_keypoints(w as f64, h as f64, pose, |k| confs[k]);
        keypoints.push(json!({ "image_id": id, "keypoints": kp, "score": 0.9 }));

        let p_right = 0.45 + 0.5 * (w as f64 - 12.0) / 40.0;
        for model in MODELS {
            let pred = if rng.gen_bool(p_right.clamp(0.0, 1.0)) {
                gender
            } else {
                1 - gender
            };
            predictions.push_str(&format!("{model},{id},{pred}\n"));
        }
    }

    let ds = SyntheticDataset {
        root: root.to_path_buf(),
        manifest: root.join("manifest.csv"),
        keypoints: root.join("keypoints.json"),
        predictions: root.join("predictions.csv"),
    };
    fs::write(&ds.manifest, manifest)?;
    fs::write(&ds.predictions, predictions)?;
    fs::write(
        &ds.keypoints,
        serde_json::to_string(&keypoints).map_err(io::Error::other)?,
    )?;
    Ok(ds)
}
