//! `lobtrend` pipeline driver: ingest, sample, label, train, eval, ablate,
//! sweep and bench stages with hashed manifests.

pub mod config;
mod error;
pub mod manifest;
pub mod stages;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lobtrend_core::ingest::Regime;
use lobtrend_core::sampling::SamplingSpec;
use lobtrend_nn::model::Architecture;
use serde::{Deserialize, Serialize};

pub use config::{PipelineConfig, Stage};
pub use error::{CliError, Result};
use manifest::{fingerprint, hash_inputs, hash_tree, RunManifest, TOOL_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
    pub dir: PathBuf,
}

/// Runs one stage unless its manifest shows identical config and inputs with
/// intact outputs.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<StageOutcome> {
    let dir = stages::stage_dir(cfg, stage);
    let run = || -> Result<StageOutcome> {
        let config = cfg.stage_inputs(stage);
        let ups = stages::upstream(cfg, stage);
        for u in &ups {
            if !u.exists() {
                return Err(CliError::Data(format!("missing input {}", u.display())));
            }
        }
        let inputs = hash_inputs(&ups)?;
        let fp = fingerprint(stage.name(), &config, &inputs);
        if let Some(m) = RunManifest::read(&dir) {
            if m.fingerprint == fp && m.outputs_intact(&dir) {
                log::info!("{}: inputs unchanged, skipping", stage.name());
                return Ok(StageOutcome { stage, skipped: true, dir: dir.clone() });
            }
        }
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        stages::execute(cfg, stage, &dir)?;
        RunManifest {
            stage: stage.name().to_string(),
            tool_version: TOOL_VERSION.to_string(),
            seed: cfg.seed,
            config,
            inputs,
            outputs: hash_tree(&dir)?,
            fingerprint: fp,
        }
        .write(&dir)?;
        Ok(StageOutcome { stage, skipped: false, dir: dir.clone() })
    };
    run().map_err(|e| e.in_stage(stage.name()))
}

/// Runs the configured stages in order and writes `<out>/manifest.json`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<StageOutcome>> {
    std::fs::create_dir_all(&cfg.out)?;
    let mut outcomes = Vec::new();
    for &stage in &cfg.stages {
        outcomes.push(run_stage(cfg, stage)?);
    }
    let config = serde_json::to_value(cfg)?;
    let inputs = hash_inputs(&cfg.data.input_files()).unwrap_or_default();
    let outputs = outcomes
        .iter()
        .filter_map(|o| RunManifest::read(&o.dir))
        .map(|m| manifest::FileHash { path: format!("{}/manifest.json", m.stage), sha256: m.fingerprint })
        .collect();
    RunManifest {
        stage: "pipeline".into(),
        tool_version: TOOL_VERSION.into(),
        seed: cfg.seed,
        fingerprint: fingerprint("pipeline", &config, &inputs),
        config,
        inputs,
        outputs,
    }
    .write(&cfg.out)?;
    Ok(outcomes)
}

#[derive(Debug, Parser)]
#[command(name = "lobtrend", version, about = "Limit order book trend classification pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON pipeline configuration; every field is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.lr=0.001`.
    #[arg(long = "set", global = true, value_name = "KEY=JSON")]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Fail on any book invariant violation instead of warning.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Output root; each stage writes into a subdirectory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegimeArg {
    RandomWalk,
    Momentum,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Lobster,
    Fi2010,
    Generic,
    Canonical,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SampleArg {
    Events,
    Seconds,
    Volume,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic book and write it as the ingest stage.
    Synth {
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        #[arg(long, value_enum, default_value = "momentum")]
        regime: RegimeArg,
        #[arg(long, default_value_t = 0.9)]
        persistence: f64,
        #[arg(long, default_value_t = 0.0)]
        drift: f64,
    },
    /// Parse raw files into the canonical bundle format.
    Ingest {
        #[arg(long, value_enum)]
        format: FormatArg,
        #[arg(long)]
        orderbook: Option<PathBuf>,
        #[arg(long)]
        message: Option<PathBuf>,
        #[arg(long = "file")]
        files: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        levels: usize,
    },
    /// Resample the ingested bundle.
    Sample {
        #[arg(long, value_enum)]
        mode: Option<SampleArg>,
        #[arg(long)]
        param: Option<f64>,
    },
    /// Label the sampled (or ingested) bundle and record the split.
    Label,
    /// Train one model on the labeled data, keeping the best validation epoch.
    Train {
        #[arg(long, value_enum)]
        arch: Option<ArchArg>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score the trained model on the test split.
    Eval,
    /// Train TLOB and both single-axis ablations on identical splits.
    Ablate,
    /// Grid search over window, learning rate, depth and optimizer.
    Sweep,
    /// Single-window inference latency per architecture.
    Bench {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Run the stages listed in the config.
    Pipeline,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ArchArg {
    Mlplob,
    Tlob,
    TlobNoSa,
    TlobNoTa,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Mlplob => Architecture::Mlplob,
            ArchArg::Tlob => Architecture::Tlob,
            ArchArg::TlobNoSa => Architecture::TlobNoSa,
            ArchArg::TlobNoTa => Architecture::TlobNoTa,
        }
    }
}

fn require(v: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    v.ok_or_else(|| CliError::Config(format!("--{flag} is required for this format")))
}

/// Builds the effective config: file (or defaults), `--set` overrides,
/// global flags, then subcommand flags.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut v = match &cli.global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => serde_json::json!({}),
    };
    config::apply_overrides(&mut v, &cli.global.overrides)?;
    let mut cfg = PipelineConfig::from_value(v)?;
    let g = &cli.global;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if g.strict {
        cfg.strict = true;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    use config::DataSource;
    match &cli.command {
        Command::Synth { n, regime, persistence, drift } => {
            let regime = match regime {
                RegimeArg::RandomWalk => Regime::RandomWalk,
                RegimeArg::Momentum => Regime::Momentum { drift: *drift, persistence: *persistence },
            };
            cfg.data = DataSource::Synthetic { seed: None, n: *n, regime };
        }
        Command::Ingest { format, orderbook, message, files, levels } => {
            cfg.data = match format {
                FormatArg::Lobster => DataSource::SnapshotMessagePair {
                    orderbook: require(orderbook.clone(), "orderbook")?,
                    message: require(message.clone(), "message")?,
                    levels: *levels,
                },
                FormatArg::Fi2010 => DataSource::Fi2010 { files: files.clone() },
                FormatArg::Generic => DataSource::GenericSnapshots {
                    file: require(files.first().cloned(), "file")?,
                    levels: *levels,
                },
                FormatArg::Canonical => DataSource::Canonical { dir: require(files.first().cloned(), "file")? },
            };
        }
        Command::Sample { mode, param } => {
            if let Some(mode) = mode {
                let p = param.ok_or_else(|| CliError::Config("--param is required with --mode".into()))?;
                cfg.sampling = Some(match mode {
                    SampleArg::Events => SamplingSpec::EveryNEvents(p as usize),
                    SampleArg::Seconds => SamplingSpec::EveryDtSeconds(p),
                    SampleArg::Volume => SamplingSpec::EveryVShares(p),
                });
            }
        }
        Command::Train { arch, epochs, lr } => {
            if let Some(a) = arch {
                cfg.model.architecture = Some((*a).into());
            }
            if let Some(e) = epochs {
                cfg.train.max_epochs = *e;
            }
            if lr.is_some() {
                cfg.train.lr = *lr;
            }
        }
        Command::Bench { trials } => {
            if let Some(t) = trials {
                cfg.bench.trials = *t;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Executes a parsed command line.
pub fn run(cli: &Cli) -> Result<Vec<StageOutcome>> {
    let cfg = resolve_config(cli)?;
    let stage = match &cli.command {
        Command::Synth { .. } | Command::Ingest { .. } => Stage::Ingest,
        Command::Sample { .. } => Stage::Sample,
        Command::Label => Stage::Label,
        Command::Train { .. } => Stage::Train,
        Command::Eval => Stage::Eval,
        Command::Ablate => Stage::Ablate,
        Command::Sweep => Stage::Sweep,
        Command::Bench { .. } => Stage::Bench,
        Command::Pipeline => return run_pipeline(&cfg),
    };
    Ok(vec![run_stage(&cfg, stage)?])
}
