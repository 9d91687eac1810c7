//! Stage implementations. Each stage reads its upstream stage directory and
//! writes into `<out>/<stage>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lobtrend_core::evaluation::{experiment_report, majority_baseline_f1, EvalCell};
use lobtrend_core::features::{assemble_features, WindowSet};
use lobtrend_core::ingest::{
    parse_fi2010_matrix, parse_generic_snapshots, parse_snapshot_message_pair, plan_split, read_bundle, synth_lob,
    write_bundle, BundleSource, DatasetBundle, FeatureMatrix, SplitPlan,
};
use lobtrend_core::labeling::{class_distribution, label_with_policy, ClassDistribution, LabelingSpec};
use lobtrend_core::TrendLabel;
use lobtrend_nn::bench::{latency_bench, LatencyReport};
use lobtrend_nn::model::{build_ablation, Architecture, Model, ModelConfig};
use lobtrend_nn::sweep::sweep;
use lobtrend_nn::train::{load_model, predict, save_model, train, Predictions};
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, PipelineConfig, Stage};
use crate::error::{CliError, Result};

pub const LABELING_FILE: &str = "labeling.json";
pub const SPLIT_FILE: &str = "split.json";
pub const CHECKPOINT_STEM: &str = "best";

pub fn stage_dir(cfg: &PipelineConfig, stage: Stage) -> PathBuf {
    cfg.out.join(stage.name())
}

fn has_output(dir: &Path) -> bool {
    dir.join(crate::manifest::MANIFEST_FILE).exists()
}

/// Directories (or files) a stage reads.
pub fn upstream(cfg: &PipelineConfig, stage: Stage) -> Vec<PathBuf> {
    let dir = |s| stage_dir(cfg, s);
    let labeled_source = || {
        let sample = dir(Stage::Sample);
        if has_output(&sample) {
            sample
        } else {
            dir(Stage::Ingest)
        }
    };
    match stage {
        Stage::Ingest => cfg.data.input_files(),
        Stage::Sample => vec![dir(Stage::Ingest)],
        Stage::Label => vec![labeled_source()],
        Stage::Train | Stage::Ablate | Stage::Sweep => vec![dir(Stage::Label)],
        Stage::Eval => vec![dir(Stage::Label), dir(Stage::Train)],
        Stage::Bench => Vec::new(),
    }
}

fn missing_upstream(stage: Stage, path: &Path) -> CliError {
    CliError::Data(format!("{} needs {} (run the upstream stage first)", stage.name(), path.display()))
}

fn read_upstream_bundle(stage: Stage, dir: &Path) -> Result<DatasetBundle> {
    if !dir.exists() {
        return Err(missing_upstream(stage, dir));
    }
    Ok(read_bundle(dir)?)
}

/// Runs `stage` from scratch, writing into `dir`.
pub fn execute(cfg: &PipelineConfig, stage: Stage, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    match stage {
        Stage::Ingest => ingest(cfg, dir),
        Stage::Sample => sample(cfg, dir),
        Stage::Label => label(cfg, dir),
        Stage::Train => train_stage(cfg, dir),
        Stage::Eval => eval(cfg, dir),
        Stage::Ablate => ablate(cfg, dir),
        Stage::Sweep => sweep_stage(cfg, dir),
        Stage::Bench => bench(cfg, dir),
    }
}

fn concat(mut parts: Vec<DatasetBundle>) -> Result<DatasetBundle> {
    let mut out = parts.remove(0);
    for b in parts {
        if b.levels() != out.levels() {
            return Err(CliError::Data("FI-2010 files disagree on book depth".into()));
        }
        out.snapshots.extend(b.snapshots);
        match (&mut out.extra_features, b.extra_features) {
            (Some(a), Some(x)) if a.cols == x.cols => a.data.extend(x.data),
            (None, None) => {}
            _ => return Err(CliError::Data("FI-2010 files disagree on auxiliary features".into())),
        }
        match (&mut out.provided_labels, b.provided_labels) {
            (Some(a), Some(x)) => {
                for (h, labels) in x {
                    a.get_mut(&h)
                        .ok_or_else(|| CliError::Data(format!("FI-2010 files disagree on horizon {h}")))?
                        .extend(labels);
                }
            }
            (None, None) => {}
            _ => return Err(CliError::Data("FI-2010 files disagree on provided labels".into())),
        }
    }
    if let Some(x) = &out.extra_features {
        out.extra_features = Some(FeatureMatrix::new(x.cols, x.data.clone())?);
    }
    out.check_shape()?;
    Ok(out)
}

pub fn load_source(cfg: &PipelineConfig) -> Result<DatasetBundle> {
    Ok(match &cfg.data {
        DataSource::Synthetic { seed, n, regime } => synth_lob(seed.unwrap_or(cfg.seed), *n, *regime)?,
        DataSource::SnapshotMessagePair { orderbook, message, levels } => {
            parse_snapshot_message_pair(orderbook, message, *levels, cfg.strict)?
        }
        DataSource::Fi2010 { files } => {
            let parts = files.iter().map(|f| parse_fi2010_matrix(f, cfg.strict)).collect::<lobtrend_core::Result<Vec<_>>>()?;
            let mut b = concat(parts)?;
            b.source = BundleSource::Fi2010 { file: files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>().join(",") };
            b
        }
        DataSource::GenericSnapshots { file, levels } => parse_generic_snapshots(file, *levels, cfg.strict)?,
        DataSource::Canonical { dir } => read_bundle(dir)?,
    })
}

fn ingest(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let bundle = load_source(cfg)?;
    let diag = bundle.enforce(cfg.strict)?;
    log::info!("ingested {} rows of depth {} ({} violations)", bundle.len(), bundle.levels(), diag.violations.len());
    write_bundle(dir, &bundle)?;
    Ok(())
}

fn sample(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let src = &upstream(cfg, Stage::Sample)[0];
    let bundle = read_upstream_bundle(Stage::Sample, src)?;
    let out = match &cfg.sampling {
        Some(spec) => spec.apply(&bundle)?,
        None => bundle,
    };
    log::info!("sampled {} rows", out.len());
    write_bundle(dir, &out)?;
    Ok(())
}

/// What the label stage decided, stored next to the labeled bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingRecord {
    pub spec: LabelingSpec,
    pub provided: bool,
    pub theta: f64,
    pub labeled_rows: usize,
    /// Class shares over the training partition only.
    pub train_distribution: ClassDistribution,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn label(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let src = &upstream(cfg, Stage::Label)[0];
    let mut bundle = read_upstream_bundle(Stage::Label, src)?;
    let spec = cfg.labeling.spec()?;
    let plan = plan_split(&bundle, &cfg.split_spec()?)?;
    let n = bundle.len();
    let (labels, theta) = if cfg.labeling.use_provided {
        let labels = bundle
            .provided_labels
            .as_ref()
            .and_then(|m| m.get(&spec.horizon))
            .cloned()
            .ok_or_else(|| CliError::Data(format!("data carries no labels for horizon {}", spec.horizon)))?;
        (labels, spec.theta)
    } else {
        let s = label_with_policy(&bundle.mid_prices()?, &bundle.snapshots, &spec, plan.train.clone())?;
        (s.aligned(n), s.theta)
    };
    let train_labels: Vec<TrendLabel> = labels[plan.train.clone()].iter().flatten().copied().collect();
    let record = LabelingRecord {
        spec,
        provided: cfg.labeling.use_provided,
        theta,
        labeled_rows: labels.iter().flatten().count(),
        train_distribution: class_distribution(&train_labels)?,
    };
    log::info!("labeled {} rows at h={} with theta {theta:.3e}", record.labeled_rows, spec.horizon);
    bundle.provided_labels = Some(BTreeMap::from([(spec.horizon, labels)]));
    write_bundle(dir, &bundle)?;
    write_json(&dir.join(LABELING_FILE), &record)?;
    write_json(&dir.join(SPLIT_FILE), &plan)?;
    Ok(())
}

/// Windows of length `window` from the label stage, partitioned by the
/// stored split plan.
pub struct Splits {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    pub record: LabelingRecord,
}

pub fn load_splits(cfg: &PipelineConfig, window: usize) -> Result<Splits> {
    let dir = stage_dir(cfg, Stage::Label);
    let bundle = read_upstream_bundle(Stage::Label, &dir)?;
    let record: LabelingRecord = read_json(&dir.join(LABELING_FILE))?;
    let plan: SplitPlan = read_json(&dir.join(SPLIT_FILE))?;
    let all = assemble_features(&bundle, cfg.features, window, record.spec.horizon)?;
    let part = |r: std::ops::Range<usize>, name: &str| {
        let w = all.within(r);
        if w.is_empty() {
            Err(CliError::Data(format!("{name} partition holds no complete window of length {window}")))
        } else {
            Ok(w)
        }
    };
    Ok(Splits {
        train: part(plan.train.clone(), "train")?,
        val: part(plan.val.clone(), "validation")?,
        test: part(plan.test.clone(), "test")?,
        record,
    })
}

/// Input width of the labeled data under the configured feature assembly.
fn feature_width(cfg: &PipelineConfig) -> Result<usize> {
    Ok(load_splits(cfg, 1)?.train.width())
}

fn model_config(cfg: &PipelineConfig, arch: Architecture) -> Result<ModelConfig> {
    Ok(cfg.model.config(arch, feature_width(cfg)?, cfg.seed))
}

fn train_stage(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let arch = cfg.model.architecture();
    let mc = model_config(cfg, arch)?;
    let s = load_splits(cfg, mc.window)?;
    let spec = cfg.train.spec(arch, cfg.seed, s.record.spec);
    log::info!("training {arch} on {} windows, validating on {}", s.train.len(), s.val.len());
    let mut run = train(&mc, &s.train, &s.val, &spec)?;
    save_model(dir, CHECKPOINT_STEM, &run.model)?;
    run.record.checkpoint = Some(CHECKPOINT_STEM.to_string());
    run.record.write(dir, "run")?;
    Ok(())
}

fn write_predictions(path: &Path, truth: &[TrendLabel], p: &Predictions) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["truth", "pred", "p_down", "p_stable", "p_up"])?;
    for ((t, y), s) in truth.iter().zip(&p.pred).zip(&p.probs) {
        w.write_record([t.index().to_string(), y.index().to_string(), s[0].to_string(), s[1].to_string(), s[2].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub model: String,
    pub horizon: usize,
    pub theta: f64,
    pub test_windows: usize,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub accuracy: f64,
    /// Macro-F1 of always predicting the training majority class.
    pub majority_baseline_f1: f64,
}

fn evaluate(name: &str, model: &Model<f32>, s: &Splits, batch: usize) -> Result<(EvalCell, Predictions, f64)> {
    let p = predict(model, &s.test, batch)?;
    let baseline = majority_baseline_f1(&s.train.labels, &s.test.labels)?;
    let cell = EvalCell {
        model: name.to_string(),
        horizon: s.record.spec.horizon,
        theta: s.record.theta,
        truth: s.test.labels.clone(),
        pred: p.pred.clone(),
        scores: p.probs.clone(),
    };
    Ok((cell, p, baseline))
}

fn eval(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let train_dir = stage_dir(cfg, Stage::Train);
    if !train_dir.join(format!("{CHECKPOINT_STEM}.json")).exists() {
        return Err(missing_upstream(Stage::Eval, &train_dir));
    }
    let model = load_model(&train_dir, CHECKPOINT_STEM)?;
    let s = load_splits(cfg, model.config.window)?;
    let name = model.config.architecture.name();
    let (cell, p, baseline) = evaluate(name, &model, &s, cfg.train.eval_batch_size)?;
    write_predictions(&dir.join("predictions.csv"), &s.test.labels, &p)?;
    let summary = experiment_report(std::slice::from_ref(&cell), dir)?.remove(0);
    let out = EvalSummary {
        model: name.to_string(),
        horizon: cell.horizon,
        theta: cell.theta,
        test_windows: s.test.len(),
        f1_macro: summary.f1_macro,
        f1_weighted: summary.f1_weighted,
        accuracy: summary.accuracy,
        majority_baseline_f1: baseline,
    };
    log::info!("{name}: test macro-F1 {:.4} (majority baseline {:.4})", out.f1_macro, baseline);
    write_json(&dir.join("eval.json"), &out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    pub temporal_layers: usize,
    pub spatial_layers: usize,
    pub parameters: usize,
    pub best_val_f1: f64,
    pub test_f1_macro: f64,
}

fn ablate(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let base = model_config(cfg, Architecture::Tlob)?;
    let s = load_splits(cfg, base.window)?;
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for variant in [Architecture::Tlob, Architecture::TlobNoSa, Architecture::TlobNoTa] {
        let mc = build_ablation(variant, &base);
        let (ta, sa) = mc.attention_counts();
        log::info!("{variant}: {ta} temporal and {sa} spatial attention layers");
        let spec = cfg.train.spec(Architecture::Tlob, cfg.seed, s.record.spec);
        let run = train(&mc, &s.train, &s.val, &spec)?;
        let (cell, _, _) = evaluate(variant.name(), &run.model, &s, cfg.train.eval_batch_size)?;
        let test_f1 = cell.summarize()?.f1_macro;
        run.record.write(dir, &format!("run_{}", variant.name()))?;
        rows.push(AblationRow {
            model: variant.name().to_string(),
            temporal_layers: ta,
            spatial_layers: sa,
            parameters: run.model.parameter_count(),
            best_val_f1: run.record.best_val_f1,
            test_f1_macro: test_f1,
        });
        cells.push(cell);
    }
    let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    write_json(&dir.join("ablation.json"), &rows)?;
    experiment_report(&cells, &dir.join("report"))?;
    Ok(())
}

fn sweep_stage(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let arch = cfg.model.architecture();
    let base = model_config(cfg, arch)?;
    let spec = cfg.train.spec(arch, cfg.seed, cfg.labeling.spec()?);
    let board = sweep(&base, &spec, &cfg.sweep.grid, &cfg.sweep.budget, |t| {
        let s = load_splits(cfg, t).map_err(|e| lobtrend_nn::NnError::Config(e.to_string()))?;
        Ok((s.train, s.val))
    })?;
    if board.incomplete {
        log::warn!("sweep budget exhausted; leaderboard is partial");
    }
    board.write_csv(&dir.join("leaderboard.csv"))?;
    write_json(&dir.join("leaderboard.json"), &board)
}

fn bench(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let mut reports: Vec<LatencyReport> = Vec::new();
    for &arch in &cfg.bench.architectures {
        let model = Model::<f32>::new(cfg.model.config(arch, cfg.bench.features, cfg.seed))?;
        let r = latency_bench(&model, cfg.bench.trials, cfg.bench.warmup, cfg.seed)?;
        log::info!("{arch}: {} parameters, median {:.3} ms", r.parameter_count, r.median_ms);
        reports.push(r);
    }
    let mut w = csv::Writer::from_path(dir.join("bench.csv"))?;
    for r in &reports {
        w.serialize(r)?;
    }
    w.flush()?;
    write_json(&dir.join("bench.json"), &reports)
}
