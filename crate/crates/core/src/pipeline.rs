//! The six batch commands. Each reads its inputs from the configured paths
//! or from earlier artifacts in the output directory and writes its own
//! artifacts there.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::explain::{
    default_interaction, dependence_data, explain_rows, fit_surrogate, mean_abs_shap,
    per_quality_shap, select_background, ExplainError,
};
use crate::headroi::{crop_heads, HeadError, HeadSample};
use crate::imgfeat::{ImageError, ImageFeatures};
use crate::ingest::{
    decode_image, join_records, load_keypoints, load_manifest, load_predictions, Gender,
    IngestError, PredictionTable, SampleRow,
};
use crate::metrics::{
    compare_correct_vs_all, face_importance, mean_accuracy, meta_label, AttributeCounts,
    ConfusionCounts, MetricsError,
};
use crate::report::{self, ReportError};
use crate::subjfeat::{build_feature_row, Feature, FeatureRow, PoseError, SubjectFeatures};
use crate::tiering::{assign_tiers, dataset_stats, TierAssignment, TierError};

pub const FEATURES_CSV: &str = "features.csv";
pub const FEATURES_LOG_CSV: &str = "features_log.csv";
pub const TIERS_CSV: &str = "tiers.csv";
pub const SHAPLEY_JSONL: &str = "shapley.jsonl";
pub const RANKINGS_CSV: &str = "rankings.csv";
pub const PER_TIER_CSV: &str = "per_tier.csv";
pub const SURROGATE_JSON: &str = "surrogate.json";
pub const FACES_DIR: &str = "faces";
pub const FACE_MANIFEST_CSV: &str = "face_manifest.csv";
pub const FACES_LOG_CSV: &str = "faces_log.csv";
pub const MODEL_MA_CSV: &str = "model_ma.csv";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const FI_CSV: &str = "fi.csv";
pub const REPORT_JSON: &str = "report.json";
pub const SHAP_BAR_SVG: &str = "shap_bar.svg";

pub fn dependence_file(feature: Feature) -> String {
    format!("dependence_{}.csv", feature.name())
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tier(#[from] TierError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("model {model_id:?} has no prediction for sample {sample_id:?}")]
    MissingModelPrediction { model_id: String, sample_id: String },
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "ConfigError",
            PipelineError::Ingest(e) => e.kind(),
            PipelineError::Explain(e) => e.kind(),
            PipelineError::Head(e) => e.kind(),
            PipelineError::Metrics(e) => e.kind(),
            PipelineError::Tier(e) => e.kind(),
            PipelineError::Report(e) => e.kind(),
            PipelineError::MissingModelPrediction { .. } => "MissingPrediction",
        }
    }

    /// `{"error": kind, "message": text}`.
    pub fn to_json(&self) -> Value {
        json!({ "error": self.kind(), "message": self.to_string() })
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// What a command wrote and what it has to say about it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandOutcome {
    pub written: Vec<PathBuf>,
    pub summary: Vec<String>,
    pub warnings: Vec<String>,
    /// Per-sample failures. Nonzero means the run is not clean.
    pub error_records: usize,
}

impl CommandOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.error_records == 0 {
            0
        } else {
            1
        }
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| ConfigError(format!("--{flag} is required")).into())
}

fn ensure_out(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).map_err(|e| ReportError::Io {
        path: cfg.out.clone(),
        message: e.to_string(),
    })?;
    Ok(&cfg.out)
}

/// Loads and merges every configured prediction file.
pub fn load_all_predictions(paths: &[PathBuf]) -> Result<PredictionTable> {
    if paths.is_empty() {
        return Err(ConfigError("--predictions is required".into()).into());
    }
    let mut table = PredictionTable::new();
    for p in paths {
        table.merge(load_predictions(p)?)?;
    }
    Ok(table)
}

enum SampleOutcome {
    Row(FeatureRow),
    Skip(String),
    Error(String),
}

fn features_for(sample: &SampleRow, cfg: &RunConfig) -> SampleOutcome {
    let record = &sample.record;
    let image = match decode_image(&record.path) {
        Ok(img) => img,
        Err(e) => return SampleOutcome::Error(format!("{}: {e}", e.kind())),
    };
    let image = match ImageFeatures::compute(&image, &cfg.image) {
        Ok(f) => f,
        Err(e @ ImageError::TooSmall { .. }) => {
            return SampleOutcome::Error(format!("ImageTooSmall: {e}"))
        }
    };
    let subject = match SubjectFeatures::compute(&sample.keypoints) {
        Ok(s) => s,
        Err(e @ PoseError::DegenerateGeometry) => {
            return SampleOutcome::Skip(format!("DegenerateGeometry: {e}"))
        }
    };
    let preds: Vec<Gender> = sample.predictions.iter().map(|(_, g)| *g).collect();
    match meta_label(&preds, record.gender_gt) {
        Ok(label) => SampleOutcome::Row(build_feature_row(record, image, subject, label)),
        Err(e) => SampleOutcome::Error(format!("{}: {e}", e.kind())),
    }
}

/// Computes the seven features and the meta-label of every joined sample.
/// Writes `features.csv` and `features_log.csv`.
pub fn cmd_features(cfg: &RunConfig) -> Result<CommandOutcome> {
    let manifest = load_manifest(require(&cfg.manifest, "manifest")?)?;
    let keypoints = load_keypoints(require(&cfg.keypoints, "keypoints")?)?;
    let predictions = load_all_predictions(&cfg.predictions)?;
    let out = ensure_out(cfg)?;

    let mut outcome = CommandOutcome::default();
    if keypoints.clamped > 0 {
        outcome.warn(format!("{} keypoint confidences clamped to [0, 1]", keypoints.clamped));
    }
    if keypoints.duplicates > 0 {
        outcome.warn(format!(
            "{} duplicate keypoint entries resolved by highest score",
            keypoints.duplicates
        ));
    }
    let (samples, join) = join_records(&manifest, &keypoints, Some(&predictions))?;

    let mut log_entries: Vec<(String, &str, String)> = Vec::new();
    for id in &join.missing_keypoints {
        log_entries.push((id.clone(), "skip", "no keypoints".into()));
    }
    for id in &join.missing_predictions {
        log_entries.push((id.clone(), "skip", "not predicted by every model".into()));
    }
    if !join.unknown_keypoints.is_empty() || !join.unknown_predictions.is_empty() {
        outcome.warn(format!(
            "{} keypoint and {} prediction ids are not in the manifest",
            join.unknown_keypoints.len(),
            join.unknown_predictions.len()
        ));
    }

    let results: Vec<SampleOutcome> = samples.par_iter().map(|s| features_for(s, cfg)).collect();
    let mut rows = Vec::new();
    for (sample, res) in samples.iter().zip(results) {
        let id = sample.record.sample_id.clone();
        match res {
            SampleOutcome::Row(r) => rows.push(r),
            SampleOutcome::Skip(reason) => log_entries.push((id, "skip", reason)),
            SampleOutcome::Error(reason) => {
                outcome.error_records += 1;
                log_entries.push((id, "error", reason));
            }
        }
    }
    log_entries.sort();

    outcome
        .written
        .push(report::write_features_csv(out.join(FEATURES_CSV), &rows)?);
    outcome
        .written
        .push(report::write_log_csv(out.join(FEATURES_LOG_CSV), &log_entries)?);
    let skipped = log_entries.len() - outcome.error_records;
    outcome.summary.push(format!(
        "features: {} rows, {} skipped, {} errors",
        rows.len(),
        skipped,
        outcome.error_records
    ));
    Ok(outcome)
}

fn read_features(out: &Path) -> Result<Vec<FeatureRow>> {
    Ok(report::read_features_csv(out.join(FEATURES_CSV))?)
}

/// Per-dataset normalized statistics and quality tiers. Writes `tiers.csv`.
pub fn cmd_tier(cfg: &RunConfig) -> Result<CommandOutcome> {
    let out = ensure_out(cfg)?;
    let rows = read_features(out)?;
    let stats = dataset_stats(&rows, cfg.norm)?;
    let tiers = assign_tiers(&stats);

    let mut outcome = CommandOutcome::default();
    for (a, b) in &tiers.tie_breaks {
        outcome.warn(format!("quality tie between {a} and {b}"));
    }
    outcome
        .written
        .push(report::write_tiers_csv(out.join(TIERS_CSV), &stats, &tiers)?);
    for (name, tier) in &tiers.tiers {
        outcome.summary.push(format!(
            "{name}: {tier} (score {})",
            report::fmt_float(tiers.scores[name])
        ));
    }
    Ok(outcome)
}

fn tiers_for_explain(cfg: &RunConfig, rows: &[FeatureRow]) -> Result<TierAssignment> {
    let path = cfg.out.join(TIERS_CSV);
    if path.exists() {
        return Ok(report::read_tiers_csv(&path)?.1);
    }
    Ok(assign_tiers(&dataset_stats(rows, cfg.norm)?))
}

/// Fits the surrogate to the meta-label and attributes each sample's
/// output to the seven features.
pub fn cmd_explain(cfg: &RunConfig) -> Result<CommandOutcome> {
    let out = ensure_out(cfg)?;
    let rows = read_features(out)?;
    let matrix: Vec<Vec<f64>> = rows.iter().map(|r| r.values().to_vec()).collect();
    let labels: Vec<f64> = rows.iter().map(|r| r.meta_label as f64).collect();
    let (model, fit) = fit_surrogate(&matrix, &labels, &cfg.surrogate)?;
    let background = select_background(&matrix, cfg.background_cap, cfg.seed);
    let explanations = explain_rows(&model, &rows, &background)?;

    let mut outcome = CommandOutcome::default();
    if fit.constant_labels {
        outcome.warn("meta-label is constant; every attribution is zero".into());
    }
    let worst_gap = explanations
        .iter()
        .map(|e| e.efficiency_gap().abs())
        .fold(0.0, f64::max);
    if worst_gap > 1e-9 {
        outcome.warn(format!("efficiency gap up to {worst_gap:e}"));
    }

    outcome.written.push(report::write_explanations_jsonl(
        out.join(SHAPLEY_JSONL),
        &explanations,
    )?);
    let ranked = mean_abs_shap(&explanations);
    outcome
        .written
        .push(report::write_rankings_csv(out.join(RANKINGS_CSV), &ranked)?);

    for feature in Feature::ALL {
        let interaction = match cfg.interaction {
            Some(f) if f != feature => f,
            _ => default_interaction(&explanations, feature),
        };
        let points = dependence_data(&explanations, feature, interaction);
        outcome.written.push(report::write_dependence_csv(
            out.join(dependence_file(feature)),
            feature,
            interaction,
            &points,
        )?);
    }

    match tiers_for_explain(cfg, &rows) {
        Ok(tiers) => {
            let table = per_quality_shap(&explanations, &tiers)?;
            outcome
                .written
                .push(report::write_per_tier_csv(out.join(PER_TIER_CSV), &table)?);
        }
        Err(PipelineError::Tier(e)) => {
            outcome.warn(format!("no per-tier table: {e}"));
        }
        Err(e) => return Err(e),
    }

    let surrogate = json!({
        "params": cfg.surrogate,
        "rows": rows.len(),
        "background_rows": background.len(),
        "trees": model.trees().len(),
        "max_depth": model.max_depth(),
        "training_loss": fit.training_loss,
        "training_accuracy": fit.training_accuracy,
        "constant_labels": fit.constant_labels,
        "max_efficiency_gap": worst_gap,
    });
    let path = out.join(SURROGATE_JSON);
    write_json(&path, &surrogate)?;
    outcome.written.push(path);

    for (i, r) in ranked.iter().take(3).enumerate() {
        outcome.summary.push(format!(
            "#{} {} mean|phi|={} ({})",
            i + 1,
            r.feature,
            report::fmt_float(r.mean_abs_phi),
            r.direction
        ));
    }
    Ok(outcome)
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| {
        ReportError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
        .into()
    })
}

/// Crops the head of every frontal sample. Writes `faces/*.png`,
/// `face_manifest.csv` and `faces_log.csv`.
pub fn cmd_faces(cfg: &RunConfig) -> Result<CommandOutcome> {
    let manifest = load_manifest(require(&cfg.manifest, "manifest")?)?;
    let keypoints = load_keypoints(require(&cfg.keypoints, "keypoints")?)?;
    let out = ensure_out(cfg)?;
    let rows = read_features(out)?;
    let (samples, _) = join_records(&manifest, &keypoints, None)?;
    let by_id: BTreeMap<&str, &SampleRow> = samples
        .iter()
        .map(|s| (s.record.sample_id.as_str(), s))
        .collect();

    let mut outcome = CommandOutcome::default();
    let mut log_entries: Vec<(String, &str, String)> = Vec::new();
    let mut decoded = Vec::new();
    for row in &rows {
        let Some(sample) = by_id.get(row.sample_id.as_str()) else {
            log_entries.push((row.sample_id.clone(), "skip", "not in manifest or keypoints".into()));
            continue;
        };
        if row.subject.pose != crate::subjfeat::Pose::Frontal {
            log_entries.push((row.sample_id.clone(), "skip", format!("pose {}", row.subject.pose)));
            continue;
        }
        match decode_image(&sample.record.path) {
            Ok(img) => decoded.push((row, *sample, img)),
            Err(e) => {
                outcome.error_records += 1;
                log_entries.push((row.sample_id.clone(), "error", format!("{}: {e}", e.kind())));
            }
        }
    }
    let heads: Vec<HeadSample<'_>> = decoded
        .iter()
        .map(|(row, sample, img)| HeadSample {
            sample_id: &row.sample_id,
            gender_gt: row.gender_gt,
            pose: row.subject.pose,
            keypoints: &sample.keypoints,
            image: img,
        })
        .collect();
    let faces_dir = out.join(FACES_DIR);
    let face_manifest = crop_heads(&heads, &faces_dir)?;
    for (id, e) in &face_manifest.errors {
        outcome.error_records += 1;
        log_entries.push((id.clone(), "error", format!("{}: {e}", e.kind())));
    }
    log_entries.sort();

    let mut csv = report::CsvOut::create(
        out.join(FACE_MANIFEST_CSV),
        &["sample_id", "face_path", "gender_gt"],
    )?;
    for r in &face_manifest.rows {
        let rel = r.face_path.strip_prefix(out).unwrap_or(&r.face_path);
        csv.row([
            r.sample_id.clone(),
            rel.to_string_lossy().replace('\\', "/"),
            r.gender_gt.code().to_string(),
        ])?;
        outcome.written.push(r.face_path.clone());
    }
    outcome.written.push(csv.finish()?);
    outcome
        .written
        .push(report::write_log_csv(out.join(FACES_LOG_CSV), &log_entries)?);

    if face_manifest.rows.is_empty() {
        outcome.warn("no frontal samples; face manifest is empty".into());
    }
    outcome.summary.push(format!(
        "faces: {} crops, {} skipped, {} errors",
        face_manifest.rows.len(),
        log_entries.len() - outcome.error_records,
        outcome.error_records
    ));
    Ok(outcome)
}

fn model_ma(
    table: &PredictionTable,
    model_id: &str,
    truth: &BTreeMap<&str, Gender>,
) -> Result<(usize, f64)> {
    let preds = table.model(model_id).expect("model id from table");
    let pairs: Vec<(Gender, Gender)> = truth
        .iter()
        .filter_map(|(id, gt)| preds.get(*id).map(|p| (*p, *gt)))
        .collect();
    let counts = ConfusionCounts::single(AttributeCounts::from_pairs(pairs.iter().copied()));
    Ok((pairs.len(), mean_accuracy(&counts)?))
}

/// mA per model, meta-accuracy, the correct-versus-all comparison and the
/// face-importance table.
pub fn cmd_metrics(cfg: &RunConfig) -> Result<CommandOutcome> {
    let predictions = load_all_predictions(&cfg.predictions)?;
    let out = ensure_out(cfg)?;
    let rows = read_features(out)?;
    let truth: BTreeMap<&str, Gender> = rows
        .iter()
        .map(|r| (r.sample_id.as_str(), r.gender_gt))
        .collect();

    let mut outcome = CommandOutcome::default();
    let mut csv = report::CsvOut::create(out.join(MODEL_MA_CSV), &["model_id", "n", "ma"])?;
    for model_id in predictions.model_ids() {
        let (n, ma) = model_ma(&predictions, model_id, &truth)?;
        if n < truth.len() {
            let sample_id = truth
                .keys()
                .find(|id| predictions.get(model_id, id).is_none())
                .expect("some sample lacks a prediction");
            return Err(PipelineError::MissingModelPrediction {
                model_id: model_id.to_string(),
                sample_id: sample_id.to_string(),
            });
        }
        csv.row([model_id.to_string(), n.to_string(), report::fmt_float(ma)])?;
        outcome
            .summary
            .push(format!("{model_id}: mA {}", report::fmt_float(ma)));
    }
    let correct = rows.iter().filter(|r| r.meta_label == 1).count();
    let meta_acc = if rows.is_empty() {
        0.0
    } else {
        100.0 * correct as f64 / rows.len() as f64
    };
    csv.row([
        "all_correct".to_string(),
        rows.len().to_string(),
        report::fmt_float(meta_acc),
    ])?;
    outcome.written.push(csv.finish()?);
    outcome.summary.push(format!(
        "all models correct on {correct}/{} samples",
        rows.len()
    ));

    match compare_correct_vs_all(&rows) {
        Ok(cmp) => outcome
            .written
            .push(report::write_comparison_csv(out.join(COMPARISON_CSV), &cmp)?),
        Err(e) => outcome.warn(format!("no comparison table: {e}")),
    }

    let mut fi_rows = Vec::new();
    if let Some(path) = &cfg.fi_input {
        if !path.exists() {
            return Err(IngestError::MissingFile(path.clone()).into());
        }
        for (label, ma_f, ma_max) in report::read_fi_input(path)? {
            fi_rows.push((label, face_importance(ma_f, ma_max)?));
        }
    }
    if let Some(path) = &cfg.face_predictions {
        let face = load_predictions(path)?;
        fi_rows.extend(face_rows(&face, &predictions, &truth)?);
    }
    if !fi_rows.is_empty() {
        for (label, fi) in &fi_rows {
            outcome
                .summary
                .push(format!("{label}: FI {}", report::fmt_float(fi.fi)));
        }
        outcome
            .written
            .push(report::write_fi_csv(out.join(FI_CSV), &fi_rows)?);
    }
    Ok(outcome)
}

/// FI of each face-only model against the best body model on the same
/// samples.
fn face_rows(
    face: &PredictionTable,
    body: &PredictionTable,
    truth: &BTreeMap<&str, Gender>,
) -> Result<Vec<(String, crate::metrics::FaceImportance)>> {
    let mut rows = Vec::new();
    for face_model in face.model_ids() {
        let covered: BTreeMap<&str, Gender> = truth
            .iter()
            .filter(|(id, _)| face.get(face_model, id).is_some())
            .map(|(id, g)| (*id, *g))
            .collect();
        let (_, ma_face) = model_ma(face, face_model, &covered)?;
        let mut ma_max = f64::NEG_INFINITY;
        for body_model in body.model_ids() {
            let (_, ma) = model_ma(body, body_model, &covered)?;
            ma_max = ma_max.max(ma);
        }
        rows.push((face_model.to_string(), face_importance(ma_face, ma_max)?));
    }
    Ok(rows)
}

/// Bundles earlier artifacts into `report.json` and draws `shap_bar.svg`.
pub fn cmd_report(cfg: &RunConfig) -> Result<CommandOutcome> {
    let out = ensure_out(cfg)?;
    let rankings = report::read_rankings_csv(out.join(RANKINGS_CSV))?;
    let optional = |name: &str| -> Result<Option<Vec<Value>>> {
        let path = out.join(name);
        if path.exists() {
            Ok(Some(report::read_csv_as_json(path)?))
        } else {
            Ok(None)
        }
    };
    let tiers_path = out.join(TIERS_CSV);
    let (stats, tiers) = if tiers_path.exists() {
        let (stats, tiers) = report::read_tiers_csv(&tiers_path)?;
        (Some(stats), Some(tiers))
    } else {
        (None, None)
    };
    let value = report::report_json(
        &rankings,
        stats,
        tiers.as_ref(),
        optional(FI_CSV)?,
        optional(MODEL_MA_CSV)?,
    );

    let mut outcome = CommandOutcome::default();
    let json_path = out.join(REPORT_JSON);
    write_json(&json_path, &value)?;
    outcome.written.push(json_path);
    let svg_path = out.join(SHAP_BAR_SVG);
    fs::write(&svg_path, report::render_importance_svg(&rankings)).map_err(|e| {
        ReportError::Io {
            path: svg_path.clone(),
            message: e.to_string(),
        }
    })?;
    outcome.written.push(svg_path);
    if rankings.is_empty() {
        outcome.warn("rankings are empty; chart has no bars".into());
    }
    outcome
        .summary
        .push(format!("report: {} ranked features", rankings.len()));
    Ok(outcome)
}
