//! JSON pipeline configuration.

use std::path::{Path, PathBuf};

use lobtrend_core::features::FeatureAssembly;
use lobtrend_core::ingest::{Regime, SplitMode, SplitSpec};
use lobtrend_core::labeling::{LabelMethod, LabelingSpec, ThetaPolicy};
use lobtrend_core::sampling::SamplingSpec;
use lobtrend_nn::bench::MIN_WARMUP;
use lobtrend_nn::model::{Architecture, ModelConfig};
use lobtrend_nn::sweep::{SweepBudget, SweepGrid};
use lobtrend_nn::train::TrainSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    #[serde(alias = "synth")]
    Ingest,
    Sample,
    Label,
    Train,
    Eval,
    Ablate,
    Sweep,
    Bench,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Sample => "sample",
            Stage::Label => "label",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Ablate => "ablate",
            Stage::Sweep => "sweep",
            Stage::Bench => "bench",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        /// Defaults to the global seed.
        #[serde(default)]
        seed: Option<u64>,
        n: usize,
        regime: Regime,
    },
    SnapshotMessagePair {
        orderbook: PathBuf,
        message: PathBuf,
        levels: usize,
    },
    /// One or more FI-2010 matrices, concatenated in order.
    Fi2010 { files: Vec<PathBuf> },
    GenericSnapshots { file: PathBuf, levels: usize },
    /// A directory previously written by the ingest stage.
    Canonical { dir: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            seed: None,
            n: 20_000,
            regime: Regime::Momentum { drift: 0.0, persistence: 0.9 },
        }
    }
}

impl DataSource {
    /// Files read by this source.
    pub fn input_files(&self) -> Vec<PathBuf> {
        match self {
            DataSource::Synthetic { .. } => Vec::new(),
            DataSource::SnapshotMessagePair { orderbook, message, .. } => vec![orderbook.clone(), message.clone()],
            DataSource::Fi2010 { files } => files.clone(),
            DataSource::GenericSnapshots { file, .. } => vec![file.clone()],
            DataSource::Canonical { dir } => vec![dir.clone()],
        }
    }
}

fn default_labeling() -> LabelingSpec {
    LabelingSpec::decoupled(10, 5, ThetaPolicy::BalancedMeanAbs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSection {
    #[serde(default = "default_method")]
    pub method: LabelMethod,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub theta: f64,
    #[serde(default = "default_theta_policy")]
    pub theta_policy: ThetaPolicy,
    /// Keep labels shipped with the data (FI-2010) instead of computing them.
    #[serde(default)]
    pub use_provided: bool,
}

fn default_method() -> LabelMethod {
    default_labeling().method
}
fn default_horizon() -> usize {
    default_labeling().horizon
}
fn default_window() -> usize {
    default_labeling().window
}
fn default_theta_policy() -> ThetaPolicy {
    default_labeling().theta_policy
}

impl Default for LabelSection {
    fn default() -> Self {
        let s = default_labeling();
        Self {
            method: s.method,
            horizon: s.horizon,
            window: s.window,
            theta: s.theta,
            theta_policy: s.theta_policy,
            use_provided: false,
        }
    }
}

impl LabelSection {
    pub fn spec(&self) -> Result<LabelingSpec> {
        Ok(LabelingSpec {
            method: self.method,
            horizon: self.horizon,
            window: self.window,
            theta: self.theta,
            theta_policy: self.theta_policy,
        }
        .normalized()?)
    }
}

fn default_split() -> SplitMode {
    SplitMode::ByFraction { train: 0.7, val: 0.15, test: 0.15 }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub architecture: Option<Architecture>,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub blocks: Option<usize>,
    #[serde(default)]
    pub expansion: Option<usize>,
    #[serde(default)]
    pub dropout: Option<f64>,
    #[serde(default)]
    pub positional_encoding: Option<bool>,
}

impl ModelSection {
    pub fn architecture(&self) -> Architecture {
        self.architecture.unwrap_or(Architecture::Tlob)
    }

    /// Full model config for `features` input columns, unset fields taking
    /// the architecture defaults.
    pub fn config(&self, arch: Architecture, features: usize, seed: u64) -> ModelConfig {
        let d = ModelConfig::new(arch, features);
        ModelConfig {
            window: self.window.unwrap_or(d.window),
            hidden: self.hidden.unwrap_or(d.hidden),
            blocks: self.blocks.unwrap_or(d.blocks),
            expansion: self.expansion.unwrap_or(d.expansion),
            dropout: self.dropout.unwrap_or(d.dropout),
            positional_encoding: self.positional_encoding.unwrap_or(d.positional_encoding),
            seed,
            ..d
        }
    }
}

fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    64
}
fn default_patience() -> usize {
    10
}
fn default_eval_batch() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Defaults to the recommended rate for the architecture.
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub target_train_accuracy: Option<f64>,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("all fields default")
    }
}

impl TrainSection {
    pub fn spec(&self, arch: Architecture, seed: u64, labeling: LabelingSpec) -> TrainSpec {
        TrainSpec {
            lr: self.lr.unwrap_or_else(|| TrainSpec::recommended_lr(arch)),
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            target_train_accuracy: self.target_train_accuracy,
            eval_batch_size: self.eval_batch_size,
            labeling: Some(labeling),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub grid: SweepGrid,
    #[serde(default)]
    pub budget: SweepBudget,
}

fn default_trials() -> usize {
    100
}
fn default_warmup() -> usize {
    MIN_WARMUP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    /// Input columns of the benchmarked models.
    #[serde(default = "default_bench_features")]
    pub features: usize,
    #[serde(default = "all_architectures")]
    pub architectures: Vec<Architecture>,
}

fn default_bench_features() -> usize {
    40
}
fn all_architectures() -> Vec<Architecture> {
    Architecture::ALL.to_vec()
}

impl Default for BenchSection {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("all fields default")
    }
}

fn default_seed() -> u64 {
    7
}
fn default_out() -> PathBuf {
    PathBuf::from("lobtrend-out")
}
fn default_features() -> FeatureAssembly {
    FeatureAssembly::LobOnly
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub strict: bool,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub sampling: Option<SamplingSpec>,
    #[serde(default)]
    pub labeling: LabelSection,
    #[serde(default = "default_split")]
    pub split: SplitMode,
    #[serde(default = "default_features")]
    pub features: FeatureAssembly,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub bench: BenchSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("all fields default")
    }
}

impl PipelineConfig {
    /// Parses a JSON value, naming the offending path on failure.
    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: Self = serde_path_to_error::deserialize(v)
            .map_err(|e| CliError::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut v: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        apply_overrides(&mut v, overrides)?;
        Self::from_value(v)
    }

    pub fn validate(&self) -> Result<()> {
        self.labeling.spec()?;
        if let DataSource::Fi2010 { files } = &self.data {
            if files.is_empty() {
                return Err(CliError::Config("at `data.files`: at least one FI-2010 file is required".into()));
            }
        }
        if self.bench.trials == 0 || self.bench.warmup < MIN_WARMUP {
            return Err(CliError::Config(format!(
                "at `bench`: need trials >= 1 and warmup >= {MIN_WARMUP}"
            )));
        }
        Ok(())
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        Ok(SplitSpec { mode: self.split, horizon: self.labeling.spec()?.look_ahead() })
    }

    /// Section values that determine the output of `stage`.
    pub fn stage_inputs(&self, stage: Stage) -> Value {
        let v = serde_json::to_value(self).expect("config serializes");
        let keys: &[&str] = match stage {
            Stage::Ingest => &["data", "strict", "seed"],
            Stage::Sample => &["sampling"],
            Stage::Label => &["labeling", "split"],
            Stage::Train | Stage::Ablate => &["features", "model", "train", "seed"],
            Stage::Eval => &["features"],
            Stage::Sweep => &["features", "model", "train", "sweep", "seed"],
            Stage::Bench => &["model", "bench", "seed"],
        };
        Value::Object(keys.iter().map(|k| (k.to_string(), v[*k].clone())).collect())
    }
}

/// Applies `dotted.path=json` overrides; values that are not valid JSON are
/// taken as strings.
pub fn apply_overrides(v: &mut Value, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (path, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{o}` is not of the form key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut cur = &mut *v;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            if !cur.is_object() {
                return Err(CliError::Config(format!("override `{path}`: `{part}` is inside a non-object")));
            }
            let map = cur.as_object_mut().expect("checked");
            if i + 1 == parts.len() {
                map.insert(part.to_string(), value.clone());
                break;
            }
            cur = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(())
}
