//! `biomaudit` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use biomaudit::config::{ConfigError, RunConfig};
use biomaudit::pipeline::{self, CommandOutcome, PipelineError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "biomaudit", version, about = "Audit gender inference on full-body images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Image and subject features plus the meta-label per sample.
    Features,
    /// Surrogate fit and Shapley attributions of the meta-label.
    Explain,
    /// Head crops of frontal samples.
    Faces,
    /// mA per model, correct-versus-all comparison, face importance.
    Metrics,
    /// Per-dataset statistics and quality tiers.
    Tier,
    /// Consolidated JSON report and importance chart.
    Report,
}

#[derive(Args, Default)]
struct Opts {
    /// Flat key=value config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    manifest: Option<String>,
    #[arg(long, global = true)]
    keypoints: Option<String>,
    /// Prediction CSV; repeat for several files.
    #[arg(long, global = true)]
    predictions: Vec<String>,
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Luminosity weights as r,g,b.
    #[arg(long, global = true, value_name = "R,G,B")]
    lum_weights: Option<String>,
    /// Laplacian kernel: 4n or 8n.
    #[arg(long, global = true)]
    kernel: Option<String>,
    #[arg(long, global = true)]
    depth: Option<String>,
    #[arg(long, global = true)]
    trees: Option<String>,
    #[arg(long, global = true)]
    shrinkage: Option<String>,
    /// gbdt or cart.
    #[arg(long, global = true)]
    surrogate: Option<String>,
    #[arg(long, global = true)]
    background_cap: Option<String>,
    /// Interaction feature for every dependence table.
    #[arg(long, global = true, value_name = "FEATURE")]
    interaction: Option<String>,
    /// minmax or zscore.
    #[arg(long, global = true)]
    norm: Option<String>,
    /// CSV of label,ma_face,ma_body rows.
    #[arg(long, global = true)]
    fi_input: Option<String>,
    /// Predictions of face-only models on the face crops.
    #[arg(long, global = true)]
    face_predictions: Option<String>,
}

impl Opts {
    fn build(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::from_env()?;
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("manifest", &self.manifest),
            ("keypoints", &self.keypoints),
            ("out", &self.out),
            ("seed", &self.seed),
            ("lum_weights", &self.lum_weights),
            ("kernel", &self.kernel),
            ("depth", &self.depth),
            ("trees", &self.trees),
            ("shrinkage", &self.shrinkage),
            ("surrogate", &self.surrogate),
            ("background_cap", &self.background_cap),
            ("interaction", &self.interaction),
            ("norm", &self.norm),
            ("fi_input", &self.fi_input),
            ("face_predictions", &self.face_predictions),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if !self.predictions.is_empty() {
            cfg.predictions = self.predictions.iter().map(PathBuf::from).collect();
        }
        Ok(cfg)
    }
}

fn run(command: Command, cfg: &RunConfig) -> Result<CommandOutcome, PipelineError> {
    match command {
        Command::Features => pipeline::cmd_features(cfg),
        Command::Explain => pipeline::cmd_explain(cfg),
        Command::Faces => pipeline::cmd_faces(cfg),
        Command::Metrics => pipeline::cmd_metrics(cfg),
        Command::Tier => pipeline::cmd_tier(cfg),
        Command::Report => pipeline::cmd_report(cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    let result = cli
        .opts
        .build()
        .map_err(PipelineError::from)
        .and_then(|cfg| run(cli.command, &cfg));
    match result {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            if outcome.error_records > 0 {
                eprintln!(
                    "{}",
                    serde_json::json!({ "error": "ErrorRecords", "count": outcome.error_records })
                );
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(2)
        }
    }
}
