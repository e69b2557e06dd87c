//! `cnsm`: the offline wbCQI workflow and the runtime control loop as
//! subcommands over a directory knowledge base.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

const PHASES: &str = "\
Workflow phases:
  Phase 1  problem specification      generate
  Phase 2  monitoring & history data  ingest, preprocess, features
  Phase 3  model definition           train, combine, evaluate
  Phase 4  deployment & runtime       anomaly, run-pcs
  any      inspection                 report

Exit codes: 0 success, 2 validation fallback (verdict on stdout), 1 error.
Every run writes a manifest, under <kb>/runs/ unless --manifest is given.";

#[derive(Debug, Parser)]
#[command(name = "cnsm", version, about = "Cognitive network and slice management workflow", after_help = PHASES)]
pub struct Cli {
    /// Write the run manifest here instead of the default location.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct KbArg {
    /// Knowledge base directory; created if missing.
    #[arg(long)]
    pub kb: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Scenario,
    Kfold,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Lasso,
    Enet,
    Forest,
    Gbt,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ControllerArg {
    Proactive,
    Reactive,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// [Phase 1] Write a synthetic multi-scenario trace as JSON lines.
    Generate {
        #[arg(long)]
        seed: u64,
        /// Samples per scenario (ignored with --config).
        #[arg(long, default_value_t = 1000)]
        samples: u64,
        /// Generator configuration JSON; its seed is replaced by --seed.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the uncorrupted trace here.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// [Phase 2] Load a JSON-lines trace into the KB as a raw dataset.
    Ingest {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "raw")]
        id: String,
        /// Scenario label recorded with the dataset.
        #[arg(long, default_value = "mixed")]
        scenario: String,
    },
    /// [Phase 2] Clean a dataset: relative time, static fields, invalid values, target spikes.
    Preprocess {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long = "in", default_value = "raw")]
        input: String,
        #[arg(long, default_value = "clean")]
        out: String,
        /// Preprocessing configuration JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the repair report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Keep corrupted target values.
        #[arg(long)]
        no_target_repair: bool,
    },
    /// [Phase 2] Split, rank features by correlation and build the expanded matrices.
    Features {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long = "in", default_value = "clean")]
        input: String,
        /// Feature-set id; matrices are stored as `<id>-train` and `<id>-validation`.
        #[arg(long, default_value = "fs")]
        id: String,
        #[arg(long, value_enum, default_value_t = SplitArg::Scenario)]
        split: SplitArg,
        /// Training share of each scenario.
        #[arg(long, default_value_t = 0.9)]
        ratio: f64,
        /// Required with --split kfold.
        #[arg(long)]
        seed: Option<u64>,
        /// Feature configuration JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// [Phase 3] Train base regressors on a feature set.
    Train {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long, default_value = "fs")]
        features: String,
        #[arg(long, value_enum, default_value_t = ModelArg::All)]
        model: ModelArg,
        #[arg(long)]
        seed: u64,
        /// Training configuration JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the configured penalties instead of selecting them on validation data.
        #[arg(long)]
        no_select_penalty: bool,
    },
    /// [Phase 3] Search the blend weights of the four base models.
    Combine {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long, default_value = "fs")]
        features: String,
        /// Weight grid step in percent; must divide 100.
        #[arg(long, default_value_t = 1)]
        step: u32,
    },
    /// [Phase 3] Compare models on validation data and apply the fallback gates.
    Evaluate {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long, default_value = "fs")]
        features: String,
        /// Model ids, first one is the gate reference.
        #[arg(long, value_delimiter = ',', default_value = "lasso,elasticnet,forest,gbt,combined")]
        models: Vec<String>,
        /// Deployment profile: full or sleeping_iot.
        #[arg(long, default_value = "full")]
        profile: String,
        /// Gate configuration JSON.
        #[arg(long)]
        gate: Option<PathBuf>,
        /// Also write the comparison report JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// [Phase 4] Fit the runtime predictors and anomaly clusters, or score a scripted run.
    Anomaly {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long, conflicts_with = "score", required_unless_present = "score")]
        fit: bool,
        #[arg(long)]
        score: bool,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 3.0)]
        threshold: f64,
        #[arg(long)]
        seed: u64,
        /// Environment JSON; defaults to the bundled two-gNB environment.
        #[arg(long)]
        env: Option<PathBuf>,
        /// Scenario script JSON or a bundled name (mie, benign, route_shift, demand_drop).
        #[arg(long, default_value = "mie")]
        scenario: String,
        #[arg(long, default_value_t = 500)]
        ticks: u64,
    },
    /// [Phase 4] Run the control loop over a scripted scenario.
    RunPcs {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long, default_value = "mie")]
        scenario: String,
        /// Initially deployed runtime model.
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value_t = 500)]
        ticks: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ControllerArg::Proactive)]
        controller: ControllerArg,
        /// Loop configuration JSON.
        #[arg(long)]
        loop_config: Option<PathBuf>,
        /// Directory for events.jsonl, ledger.json and sla.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print stored model metrics and KB contents.
    Report {
        #[command(flatten)]
        kb: KbArg,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
