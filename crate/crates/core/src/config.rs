//! Run configuration shared by every command.
//!
//! Values come, lowest precedence first, from built-in defaults, the
//! `BIOMAUDIT_SEED` environment variable (seed only), a flat `key = value`
//! config file and finally command-line flags.

use std::path::{Path, PathBuf};

use crate::explain::{SurrogateKind, SurrogateParams, DEFAULT_BACKGROUND_CAP};
use crate::imgfeat::{ImageFeatureConfig, LaplacianKernel, LuminosityWeights};
use crate::subjfeat::Feature;
use crate::tiering::NormMode;

pub const SEED_ENV: &str = "BIOMAUDIT_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub keypoints: Option<PathBuf>,
    /// One or more prediction CSVs, merged on load.
    pub predictions: Vec<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub image: ImageFeatureConfig,
    pub surrogate: SurrogateParams,
    pub background_cap: usize,
    pub interaction: Option<Feature>,
    pub norm: NormMode,
    /// CSV of `label,ma_face,ma_body` rows for the face-importance table.
    pub fi_input: Option<PathBuf>,
    /// Predictions of face-only models on the exported face crops.
    pub face_predictions: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            keypoints: None,
            predictions: Vec::new(),
            out: PathBuf::from("out"),
            seed: 0,
            image: ImageFeatureConfig::default(),
            surrogate: SurrogateParams::default(),
            background_cap: DEFAULT_BACKGROUND_CAP,
            interaction: None,
            norm: NormMode::MinMax,
            fi_input: None,
            face_predictions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config: {0}")]
pub struct ConfigError(pub String);

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| ConfigError(format!("invalid value {value:?} for {key}: {e}")))
}

pub fn parse_lum_weights(value: &str) -> Result<LuminosityWeights, ConfigError> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| parse::<f64>("lum-weights", p))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        &[r, g, b] if [r, g, b].iter().all(|w| w.is_finite() && *w >= 0.0) => {
            Ok(LuminosityWeights { r, g, b })
        }
        _ => Err(ConfigError(format!(
            "lum-weights must be three non-negative numbers r,g,b, got {value:?}"
        ))),
    }
}

impl RunConfig {
    /// Defaults with the seed taken from `BIOMAUDIT_SEED` when set.
    pub fn from_env() -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.set("seed", &v)?;
        }
        Ok(cfg)
    }

    /// Sets one option. Keys accept `-` or `_` as separators.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "manifest" => self.manifest = Some(PathBuf::from(v)),
            "keypoints" => self.keypoints = Some(PathBuf::from(v)),
            "predictions" => {
                self.predictions = v
                    .split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            "out" => self.out = PathBuf::from(v),
            "seed" => {
                self.seed = parse(&key, v)?;
                self.surrogate.seed = self.seed;
            }
            "lum_weights" => self.image.weights = parse_lum_weights(v)?,
            "kernel" => self.image.kernel = parse::<LaplacianKernel>(&key, v)?,
            "depth" => self.surrogate.max_depth = parse(&key, v)?,
            "trees" => self.surrogate.n_trees = parse(&key, v)?,
            "shrinkage" => {
                let s: f64 = parse(&key, v)?;
                if !(s > 0.0 && s <= 1.0) {
                    return Err(ConfigError(format!("shrinkage must be in (0, 1], got {s}")));
                }
                self.surrogate.shrinkage = s;
            }
            "surrogate" => self.surrogate.kind = parse::<SurrogateKind>(&key, v)?,
            "background_cap" => {
                let cap: usize = parse(&key, v)?;
                if cap == 0 {
                    return Err(ConfigError("background-cap must be at least 1".into()));
                }
                self.background_cap = cap;
            }
            "interaction" => self.interaction = Some(parse::<Feature>(&key, v)?),
            "norm" => self.norm = parse::<NormMode>(&key, v)?,
            "fi_input" => self.fi_input = Some(PathBuf::from(v)),
            "face_predictions" => self.face_predictions = Some(PathBuf::from(v)),
            other => return Err(ConfigError(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file. Blank lines and `#` comments are
    /// ignored.
    pub fn apply_file_contents(&mut self, contents: &str) -> Result<(), ConfigError> {
        for (n, line) in contents.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key=value", n + 1)))?;
            self.set(key, value)
                .map_err(|e| ConfigError(format!("line {}: {}", n + 1, e.0)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let contents = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        self.apply_file_contents(&contents)
    }
}
