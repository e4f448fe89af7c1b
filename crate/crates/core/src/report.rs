//! File formats written and read by the pipeline: CSV tables, the
//! explanation JSON lines and the SVG importance chart.
//!
//! CSV floats carry six significant digits; JSON keeps full precision.

use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};

use crate::explain::{
    DependencePoint, Direction, FeatureImportance, PerTierTable, ShapleyExplanation,
};
use crate::imgfeat::ImageFeatures;
use crate::ingest::{Gender, Split};
use crate::metrics::{ComparisonReport, FaceImportance};
use crate::subjfeat::{Feature, FeatureRow, Pose, SubjectFeatures};
use crate::tiering::{DatasetStats, Tier, TierAssignment};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("missing upstream artifact {}", .0.display())]
    MissingUpstream(PathBuf),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{}: row {row}: {message}", path.display())]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },
}

impl ReportError {
    pub fn kind(&self) -> &'static str {
        match self {
            ReportError::MissingUpstream(_) => "MissingUpstream",
            ReportError::Io { .. } => "WriteError",
            ReportError::Parse { .. } => "ParseError",
        }
    }
}

type Result<T> = std::result::Result<T, ReportError>;

/// Formats with at most six significant digits, shortest representation.
pub fn fmt_float(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ReportError {
    ReportError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// CSV writer that flushes to `path` on [`CsvOut::finish`].
pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvOut {
    pub fn create(path: impl AsRef<Path>, header: &[&str]) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut writer = csv::WriterBuilder::new().from_writer(file);
        writer.write_record(header).map_err(|e| io_err(&path, e))?;
        Ok(CsvOut { path, writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer
            .write_record(fields)
            .map_err(|e| io_err(&self.path, e))
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush().map_err(|e| io_err(&self.path, e))?;
        Ok(self.path)
    }
}

fn open_upstream(path: &Path) -> Result<csv::Reader<File>> {
    if !path.exists() {
        return Err(ReportError::MissingUpstream(path.to_path_buf()));
    }
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))
}

pub const FEATURES_HEADER: [&str; 13] = [
    "sample_id",
    "dataset",
    "split",
    "gender_gt",
    "resolution",
    "luminosity",
    "blurriness",
    "face_conf",
    "upper_conf",
    "lower_conf",
    "pose",
    "pose_code",
    "meta_label",
];

pub fn write_features_csv(path: impl AsRef<Path>, rows: &[FeatureRow]) -> Result<PathBuf> {
    let mut out = CsvOut::create(path, &FEATURES_HEADER)?;
    for r in rows {
        out.row([
            r.sample_id.clone(),
            r.dataset.clone(),
            r.split.to_string(),
            r.gender_gt.code().to_string(),
            fmt_float(r.image.resolution),
            fmt_float(r.image.luminosity),
            fmt_float(r.image.blurriness),
            fmt_float(r.subject.face_conf),
            fmt_float(r.subject.upper_conf),
            fmt_float(r.subject.lower_conf),
            r.subject.pose.to_string(),
            r.subject.pose.code().to_string(),
            r.meta_label.to_string(),
        ])?;
    }
    out.finish()
}

#[derive(Debug, Deserialize)]
struct FeatureCsvRow {
    sample_id: String,
    dataset: String,
    split: String,
    gender_gt: String,
    resolution: f64,
    luminosity: f64,
    blurriness: f64,
    face_conf: f64,
    upper_conf: f64,
    lower_conf: f64,
    pose: String,
    meta_label: u8,
}

pub fn read_features_csv(path: impl AsRef<Path>) -> Result<Vec<FeatureRow>> {
    let path = path.as_ref();
    let mut reader = open_upstream(path)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<FeatureCsvRow>().enumerate() {
        let perr = |message: String| ReportError::Parse {
            path: path.to_path_buf(),
            row: i + 1,
            message,
        };
        let r = rec.map_err(|e| perr(e.to_string()))?;
        if r.meta_label > 1 {
            return Err(perr(format!("meta_label must be 0 or 1, got {}", r.meta_label)));
        }
        rows.push(FeatureRow {
            sample_id: r.sample_id,
            dataset: r.dataset,
            split: r.split.parse::<Split>().map_err(perr)?,
            gender_gt: r.gender_gt.parse::<Gender>().map_err(perr)?,
            image: ImageFeatures {
                resolution: r.resolution,
                luminosity: r.luminosity,
                blurriness: r.blurriness,
            },
            subject: SubjectFeatures {
                face_conf: r.face_conf,
                upper_conf: r.upper_conf,
                lower_conf: r.lower_conf,
                pose: r.pose.parse::<Pose>().map_err(perr)?,
            },
            meta_label: r.meta_label,
        });
    }
    Ok(rows)
}

/// `sample_id,kind,reason` accounting rows; `kind` is `skip` or `error`.
pub fn write_log_csv(path: impl AsRef<Path>, entries: &[(String, &str, String)]) -> Result<PathBuf> {
    let mut out = CsvOut::create(path, &["sample_id", "kind", "reason"])?;
    for (id, kind, reason) in entries {
        out.row([id.as_str(), kind, reason.as_str()])?;
    }
    out.finish()
}

pub fn write_explanations_jsonl(
    path: impl AsRef<Path>,
    explanations: &[ShapleyExplanation],
) -> Result<PathBuf> {
    let path = path.as_ref();
    let mut text = String::new();
    for e in explanations {
        text.push_str(&e.to_json().to_string());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))?;
    Ok(path.to_path_buf())
}

pub fn write_rankings_csv(path: impl AsRef<Path>, ranked: &[FeatureImportance]) -> Result<PathBuf> {
    let mut out = CsvOut::create(path, &["rank", "feature", "mean_abs_phi", "direction"])?;
    for (i, r) in ranked.iter().enumerate() {
        out.row([
            (i + 1).to_string(),
            r.feature.to_string(),
            fmt_float(r.mean_abs_phi),
            r.direction.to_string(),
        ])?;
    }
    out.finish()
}

#[derive(Debug, Deserialize)]
struct RankingCsvRow {
    feature: String,
    mean_abs_phi: f64,
    direction: String,
}

pub fn read_rankings_csv(path: impl AsRef<Path>) -> Result<Vec<FeatureImportance>> {
    let path = path.as_ref();
    let mut reader = open_upstream(path)?;
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<RankingCsvRow>().enumerate() {
        let perr = |message: String| ReportError::Parse {
            path: path.to_path_buf(),
            row: i + 1,
            message,
        };
        let r = rec.map_err(|e| perr(e.to_string()))?;
        out.push(FeatureImportance {
            feature: r.feature.parse::<Feature>().map_err(perr)?,
            mean_abs_phi: r.mean_abs_phi,
            direction: r.direction.parse::<Direction>().map_err(perr)?,
        });
    }
    Ok(out)
}

pub fn write_dependence_csv(
    path: impl AsRef<Path>,
    feature: Feature,
    interaction: Feature,
    points: &[DependencePoint],
) -> Result<PathBuf> {
    let mut out = CsvOut::create(
        path,
        &["sample_id", "feature", "value", "phi", "interaction", "interaction_value"],
    )?;
    for p in points {
        out.row([
            p.sample_id.clone(),
            feature.to_string(),
            fmt_float(p.value),
            fmt_float(p.phi),
            interaction.to_string(),
            fmt_float(p.interaction_value),
        ])?;
    }
    out.finish()
}

pub fn write_per_tier_csv(path: impl AsRef<Path>, table: &PerTierTable) -> Result<PathBuf> {
    let mut header = vec!["feature"];
    header.extend(table.tiers.iter().map(|t| t.as_str()));
    let mut out = CsvOut::create(path, &header)?;
    for (f, cols) in &table.rows {
        let mut fields = vec![f.to_string()];
        fields.extend(cols.iter().map(|&v| fmt_float(v)));
        out.row(fields)?;
    }
    out.finish()
}

pub const TIERS_HEADER: [&str; 10] = [
    "dataset",
    "count",
    "resolution_mean",
    "resolution_std",
    "luminosity_mean",
    "luminosity_std",
    "blurriness_mean",
    "blurriness_std",
    "score",
    "tier",
];

pub fn write_tiers_csv(
    path: impl AsRef<Path>,
    stats: &DatasetStats,
    tiers: &TierAssignment,
) -> Result<PathBuf> {
    let mut out = CsvOut::create(path, &TIERS_HEADER)?;
    for (name, row) in &stats.datasets {
        let mut fields = vec![name.clone(), row.count.to_string()];
        for ms in row.features {
            fields.push(fmt_float(ms.mean));
            fields.push(fmt_float(ms.std));
        }
        fields.push(tiers.scores.get(name).map_or(String::new(), |&s| fmt_float(s)));
        fields.push(tiers.tier_of(name).map_or(String::new(), |t| t.to_string()));
        out.row(fields)?;
    }
    out.finish()
}

fn csv_number(v: &str) -> Option<Value> {
    if let Ok(i) = v.parse::<i64>() {
        return Some(json!(i));
    }
    v.parse::<f64>().ok().filter(|x| x.is_finite()).map(|x| json!(x))
}

/// Reads `tiers.csv` back as a JSON array of objects plus the assignment.
pub fn read_tiers_csv(path: impl AsRef<Path>) -> Result<(Vec<Value>, TierAssignment)> {
    let path = path.as_ref();
    let mut reader = open_upstream(path)?;
    let headers = reader.headers().map_err(|e| io_err(path, e))?.clone();
    let mut rows = Vec::new();
    let mut pairs = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| ReportError::Parse {
            path: path.to_path_buf(),
            row: i + 1,
            message: e.to_string(),
        })?;
        let mut obj = serde_json::Map::new();
        for (h, v) in headers.iter().zip(rec.iter()) {
            let value = match h {
                "dataset" | "tier" => json!(v),
                _ => csv_number(v).unwrap_or(Value::Null),
            };
            obj.insert(h.to_string(), value);
        }
        if let (Some(d), Some(t)) = (rec.get(0), rec.get(9)) {
            if let Ok(t) = t.parse::<Tier>() {
                pairs.push((d.to_string(), t));
            }
        }
        rows.push(Value::Object(obj));
    }
    Ok((rows, TierAssignment::from_pairs(pairs)))
}

pub fn write_comparison_csv(path: impl AsRef<Path>, report: &ComparisonReport) -> Result<PathBuf> {
    let mut out = CsvOut::create(
        path,
        &["feature", "correct_mean", "correct_std", "all_mean", "all_std"],
    )?;
    for f in &report.features {
        out.row([
            f.feature.to_string(),
            fmt_float(f.correct.mean),
            fmt_float(f.correct.std),
            fmt_float(f.all.mean),
            fmt_float(f.all.std),
        ])?;
    }
    for p in &report.poses {
        out.row([
            format!("pose_{}", p.pose),
            fmt_float(p.correct),
            String::new(),
            fmt_float(p.all),
            String::new(),
        ])?;
    }
    out.finish()
}

pub fn write_fi_csv(path: impl AsRef<Path>, rows: &[(String, FaceImportance)]) -> Result<PathBuf> {
    let mut out = CsvOut::create(path, &["label", "ma_face", "ma_body", "fi"])?;
    for (label, fi) in rows {
        out.row([
            label.clone(),
            fmt_float(fi.ma_face),
            fmt_float(fi.ma_max),
            fmt_float(fi.fi),
        ])?;
    }
    out.finish()
}

#[derive(Debug, Deserialize)]
struct FiInputRow {
    label: String,
    ma_face: f64,
    ma_body: f64,
}

/// Reads `label,ma_face,ma_body` rows.
pub fn read_fi_input(path: impl AsRef<Path>) -> Result<Vec<(String, f64, f64)>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(ReportError::Io {
            path: path.to_path_buf(),
            message: "missing file".into(),
        });
    }
    let mut reader = open_upstream(path)?;
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<FiInputRow>().enumerate() {
        let r = rec.map_err(|e| ReportError::Parse {
            path: path.to_path_buf(),
            row: i + 1,
            message: e.to_string(),
        })?;
        out.push((r.label, r.ma_face, r.ma_body));
    }
    Ok(out)
}

/// Reads any CSV as an array of JSON objects, numbers parsed where possible.
pub fn read_csv_as_json(path: impl AsRef<Path>) -> Result<Vec<Value>> {
    let path = path.as_ref();
    let mut reader = open_upstream(path)?;
    let headers = reader.headers().map_err(|e| io_err(path, e))?.clone();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| ReportError::Parse {
            path: path.to_path_buf(),
            row: i + 1,
            message: e.to_string(),
        })?;
        let obj: serde_json::Map<String, Value> = headers
            .iter()
            .zip(rec.iter())
            .map(|(h, v)| {
                let value = csv_number(v).unwrap_or_else(|| json!(v));
                (h.to_string(), value)
            })
            .collect();
        rows.push(Value::Object(obj));
    }
    Ok(rows)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn bar_color(d: Direction) -> &'static str {
    match d {
        Direction::Positive => "#1f77b4",
        Direction::Negative => "#d62728",
        Direction::Neutral => "#7f7f7f",
    }
}

/// Horizontal bar chart of mean |phi|, one bar per ranked feature, coloured
/// by direction (blue positive, red negative, grey neutral).
pub fn render_importance_svg(ranked: &[FeatureImportance]) -> String {
    const WIDTH: f64 = 640.0;
    const LEFT: f64 = 130.0;
    const RIGHT: f64 = 90.0;
    const TOP: f64 = 40.0;
    const BAR: f64 = 22.0;
    const GAP: f64 = 8.0;
    let height = TOP + ranked.len() as f64 * (BAR + GAP) + 40.0;
    let max = ranked.iter().map(|r| r.mean_abs_phi).fold(0.0, f64::max);
    let span = WIDTH - LEFT - RIGHT;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">mean(|SHAP value|)</text>"#,
        WIDTH / 2.0
    );
    for (i, r) in ranked.iter().enumerate() {
        let y = TOP + i as f64 * (BAR + GAP);
        let w = if max > 0.0 { span * r.mean_abs_phi / max } else { 0.0 };
        let name = xml_escape(r.feature.name());
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{name}</text>"#,
            LEFT - 8.0,
            y + BAR * 0.7
        );
        let _ = writeln!(
            svg,
            r#"<rect class="bar" data-feature="{name}" data-direction="{}" x="{LEFT}" y="{y}" width="{w:.3}" height="{BAR}" fill="{}"/>"#,
            r.direction,
            bar_color(r.direction)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{}">{}</text>"#,
            LEFT + w + 6.0,
            y + BAR * 0.7,
            fmt_float(r.mean_abs_phi)
        );
    }
    let axis_y = TOP + ranked.len() as f64 * (BAR + GAP);
    let _ = writeln!(
        svg,
        r##"<line x1="{LEFT}" y1="{}" x2="{LEFT}" y2="{axis_y}" stroke="#333"/>"##,
        TOP - 4.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Bundles the per-command artifacts into one JSON document.
pub fn report_json(
    rankings: &[FeatureImportance],
    stats: Option<Vec<Value>>,
    tiers: Option<&TierAssignment>,
    face_importance: Option<Vec<Value>>,
    models: Option<Vec<Value>>,
) -> Value {
    let rankings: Vec<Value> = rankings
        .iter()
        .map(|r| {
            json!({
                "feature": r.feature.name(),
                "mean_abs_phi": r.mean_abs_phi,
                "direction": r.direction.as_str(),
            })
        })
        .collect();
    let tiers = tiers.map(|t| {
        let m: serde_json::Map<String, Value> = t
            .tiers
            .iter()
            .map(|(k, v)| (k.clone(), json!(v.as_str())))
            .collect();
        Value::Object(m)
    });
    json!({
        "rankings": rankings,
        "dataset_stats": stats,
        "tiers": tiers,
        "face_importance": face_importance,
        "models": models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_float(8192.0), "8192");
        assert_eq!(fmt_float(0.1234567), "0.123457");
        assert_eq!(fmt_float(123456789.0), "123457000");
        assert_eq!(fmt_float(-2.5), "-2.5");
        assert_eq!(fmt_float(0.0), "0");
        assert_eq!(fmt_float(1e-7), "0.0000001");
    }

    #[test]
    fn features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![FeatureRow {
            sample_id: "a,1".into(),
            dataset: "PA-100K".into(),
            split: Split::Test,
            gender_gt: Gender::Female,
            image: ImageFeatures {
                resolution: 8192.0,
                luminosity: 101.123456789,
                blurriness: 2345.6789,
            },
            subject: SubjectFeatures {
                face_conf: 0.8,
                upper_conf: 0.123456789,
                lower_conf: 0.0,
                pose: Pose::Sideways,
            },
            meta_label: 1,
        }];
        let p = dir.path().join("f.csv");
        write_features_csv(&p, &rows).unwrap();
        let back = read_features_csv(&p).unwrap();
        assert_eq!(back[0].sample_id, "a,1");
        assert_eq!(back[0].subject.pose, Pose::Sideways);
        assert_eq!(back[0].image.luminosity, 101.123);
        // A second pass is lossless.
        let p2 = dir.path().join("g.csv");
        write_features_csv(&p2, &back).unwrap();
        assert_eq!(read_features_csv(&p2).unwrap(), back);
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn missing_upstream() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_rankings_csv(dir.path().join("rankings.csv")),
            Err(ReportError::MissingUpstream(_))
        ));
    }

    #[test]
    fn svg_bars() {
        let ranked = vec![
            FeatureImportance {
                feature: Feature::Resolution,
                mean_abs_phi: 0.2,
                direction: Direction::Positive,
            },
            FeatureImportance {
                feature: Feature::Blurriness,
                mean_abs_phi: 0.05,
                direction: Direction::Negative,
            },
        ];
        let svg = render_importance_svg(&ranked);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches(r#"class="bar""#).count(), 2);
        assert!(svg.contains("#d62728"));

        let empty = render_importance_svg(&[]);
        assert_eq!(empty.matches(r#"class="bar""#).count(), 0);
        assert!(empty.trim_end().ends_with("</svg>"));
    }
}
