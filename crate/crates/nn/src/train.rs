//! Mini-batch training with Adam, validation-F1 early stopping and
//! best-checkpoint retention.

use std::path::Path;
use std::time::Instant;

use lobtrend_autograd::{adam_step, load_checkpoint, save_checkpoint, AdamConfig, AdamState, Graph, ParamStore, Tensor};
use lobtrend_core::evaluation::ConfusionMatrix;
use lobtrend_core::features::WindowSet;
use lobtrend_core::labeling::LabelingSpec;
use lobtrend_core::TrendLabel;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};
use crate::model::{Architecture, Model, ModelConfig};

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
pub struct TrainSpec {
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation macro-F1 improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    /// Stop once eval-mode accuracy on the training windows reaches this.
    #[serde(default)]
    pub target_train_accuracy: Option<f64>,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    /// Horizon, window and threshold policy the training labels were built with.
    #[serde(default)]
    pub labeling: Option<LabelingSpec>,
}

impl TrainSpec {
    pub fn new(lr: f64, max_epochs: usize) -> Self {
        Self {
            lr,
            batch_size: default_batch(),
            max_epochs,
            patience: default_patience(),
            seed: 0,
            target_train_accuracy: None,
            eval_batch_size: default_eval_batch(),
            labeling: None,
        }
    }

    /// Learning rate of the recommended grid cell for `arch`.
    pub fn recommended_lr(arch: Architecture) -> f64 {
        match arch {
            Architecture::Mlplob => 1e-3,
            _ => 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(NnError::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(NnError::Config("batch sizes must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(NnError::Config("patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the training batches as they were seen during the epoch.
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    /// Eval-mode accuracy on the training windows, measured only when a target is set.
    pub train_eval_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    TargetAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ModelConfig,
    pub spec: TrainSpec,
    pub parameter_count: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub stop: StopReason,
    pub checkpoint: Option<String>,
}

impl RunRecord {
    /// Equality of everything except wall-clock timings.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let strip = |r: &Self| {
            let mut r = r.clone();
            r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
            r
        };
        strip(self) == strip(other)
    }

    pub fn epochs_to_best(&self) -> usize {
        self.best_epoch
    }

    /// Highest eval-mode training accuracy seen across epochs.
    pub fn max_train_eval_accuracy(&self) -> Option<f64> {
        self.epochs.iter().filter_map(|e| e.train_eval_accuracy).reduce(f64::max)
    }

    /// Writes `<stem>.json` and a per-epoch `<stem>.csv`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(self)?)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        w.write_record(["epoch", "train_loss", "train_accuracy", "val_loss", "val_f1", "train_eval_accuracy", "seconds"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.train_accuracy.to_string(),
                e.val_loss.to_string(),
                e.val_f1.to_string(),
                e.train_eval_accuracy.map(|a| a.to_string()).unwrap_or_default(),
                format!("{:.3}", e.seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Class probabilities and argmax predictions over a window set.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub probs: Vec<[f64; 3]>,
    pub pred: Vec<TrendLabel>,
    pub loss: f64,
}

impl Predictions {
    pub fn accuracy(&self, truth: &[TrendLabel]) -> f64 {
        let hits = self.pred.iter().zip(truth).filter(|(a, b)| a == b).count();
        hits as f64 / truth.len().max(1) as f64
    }

    pub fn f1_macro(&self, truth: &[TrendLabel]) -> Result<f64> {
        Ok(ConfusionMatrix::from_labels(truth, &self.pred)?.f1_macro())
    }
}

fn batch_tensor(set: &WindowSet, idx: &[usize], buf: &mut Vec<f64>) -> Result<Tensor<f32>> {
    buf.clear();
    set.gather(idx, buf);
    let data = buf.iter().map(|&v| v as f32).collect();
    Ok(Tensor::from_vec(vec![idx.len(), set.window(), set.width()], data)?)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn check_set(model: &Model<f32>, set: &WindowSet) -> Result<()> {
    if set.window() != model.config.window || set.width() != model.config.features {
        return Err(NnError::Config(format!(
            "windows are [{}, {}] but the model expects [{}, {}]",
            set.window(),
            set.width(),
            model.config.window,
            model.config.features
        )));
    }
    Ok(())
}

/// Eval-mode probabilities for every window in `set`.
pub fn predict(model: &Model<f32>, set: &WindowSet, batch_size: usize) -> Result<Predictions> {
    check_set(model, set)?;
    let mut probs = Vec::with_capacity(set.len());
    let mut pred = Vec::with_capacity(set.len());
    let mut loss = 0.0;
    let mut buf = Vec::new();
    let all: Vec<usize> = (0..set.len()).collect();
    for idx in all.chunks(batch_size.max(1)) {
        let x = batch_tensor(set, idx, &mut buf)?;
        let mut g = Graph::new();
        let p = model.params.bind(&mut g, false);
        let xv = g.constant(x);
        let logits = model.forward(&mut g, &p, xv, None)?;
        let ce = g.cross_entropy(logits, &set.gather_labels(idx))?;
        loss += g.value(ce).data()[0] as f64 * idx.len() as f64;
        for row in g.value(logits).data().chunks_exact(3) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let e: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
            let z: f64 = e.iter().sum();
            probs.push([e[0] / z, e[1] / z, e[2] / z]);
            pred.push(TrendLabel::from_index(argmax(row)).expect("3 classes"));
        }
    }
    Ok(Predictions {
        probs,
        pred,
        loss: loss / set.len().max(1) as f64,
    })
}

/// Trained parameters (best validation epoch) and the run history.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model<f32>,
    pub record: RunRecord,
}

/// Trains a freshly initialized `config` model.
pub fn train(config: &ModelConfig, train_set: &WindowSet, val_set: &WindowSet, spec: &TrainSpec) -> Result<Trained> {
    let model = Model::<f32>::new(config.clone())?;
    train_model(model, train_set, val_set, spec)
}

/// Trains `model` in place of its current parameters.
pub fn train_model(mut model: Model<f32>, train_set: &WindowSet, val_set: &WindowSet, spec: &TrainSpec) -> Result<Trained> {
    spec.validate()?;
    check_set(&model, train_set)?;
    check_set(&model, val_set)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(NnError::Config("training and validation windows must be nonempty".into()));
    }
    let adam = AdamConfig::with_lr(spec.lr);
    let mut state = AdamState::new(&model.params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_d70f);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut buf = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;
    let mut stale = 0;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=spec.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (b, idx) in order.chunks(spec.batch_size).enumerate() {
            let x = batch_tensor(train_set, idx, &mut buf)?;
            let targets = train_set.gather_labels(idx);
            let mut g = Graph::new();
            let p = model.params.bind(&mut g, true);
            let xv = g.constant(x);
            let rng = (model.config.dropout > 0.0).then_some(&mut dropout_rng);
            let logits = model.forward(&mut g, &p, xv, rng)?;
            let ce = g.cross_entropy(logits, &targets)?;
            let loss = g.value(ce).data()[0] as f64;
            if !loss.is_finite() {
                return Err(NnError::Divergence { epoch, batch: b, loss });
            }
            loss_sum += loss * idx.len() as f64;
            hits += g
                .value(logits)
                .data()
                .chunks_exact(3)
                .zip(&targets)
                .filter(|(row, &t)| argmax(row) == t)
                .count();
            g.backward(ce)?;
            let grads = model.params.grads(&g, &p);
            adam_step(&mut model.params, &grads, &mut state, &adam);
        }
        let val = predict(&model, val_set, spec.eval_batch_size)?;
        let val_f1 = val.f1_macro(&val_set.labels)?;
        let train_eval_accuracy = match spec.target_train_accuracy {
            Some(_) => Some(predict(&model, train_set, spec.eval_batch_size)?.accuracy(&train_set.labels)),
            None => None,
        };
        let train_loss = loss_sum / train_set.len() as f64;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_accuracy: hits as f64 / train_set.len() as f64,
            val_loss: val.loss,
            val_f1,
            train_eval_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!(
            "{} epoch {epoch}: train loss {train_loss:.4}, val loss {:.4}, val F1 {val_f1:.4}",
            model.config.architecture,
            val.loss,
        );
        if best.as_ref().is_none_or(|(_, f, _)| val_f1 > *f) {
            best = Some((epoch, val_f1, model.params.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        if let (Some(target), Some(acc)) = (spec.target_train_accuracy, train_eval_accuracy) {
            if acc >= target {
                stop = StopReason::TargetAccuracy;
                break;
            }
        }
        if stale >= spec.patience {
            stop = StopReason::Patience;
            break;
        }
    }

    let (best_epoch, best_val_f1, params) = match best {
        Some(b) => b,
        None => (0, 0.0, model.params.clone()),
    };
    model.params = params;
    let record = RunRecord {
        config: model.config.clone(),
        spec: spec.clone(),
        parameter_count: model.parameter_count(),
        epochs,
        best_epoch,
        best_val_f1,
        stop,
        checkpoint: None,
    };
    Ok(Trained { model, record })
}

/// Hex SHA-256 of the model configuration's JSON form.
pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the parameters and `<stem>.config.json` into `dir`.
pub fn save_model(dir: &Path, stem: &str, model: &Model<f32>) -> Result<()> {
    save_checkpoint(dir, stem, &model.params, &config_hash(&model.config))?;
    std::fs::write(dir.join(format!("{stem}.config.json")), serde_json::to_string_pretty(&model.config)?)?;
    Ok(())
}

pub fn load_model(dir: &Path, stem: &str) -> Result<Model<f32>> {
    let config: ModelConfig = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.config.json")))?)?;
    let (params, manifest) = load_checkpoint::<f32>(dir, stem)?;
    if manifest.config_hash != config_hash(&config) {
        return Err(NnError::Config(format!("checkpoint {stem} was written for a different configuration")));
    }
    Model::with_params(config, params)
}
