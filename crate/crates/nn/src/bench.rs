//! Single-window inference latency.

use std::time::Instant;

use lobtrend_autograd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::model::Model;

pub const MIN_WARMUP: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub architecture: String,
    pub window: usize,
    pub features: usize,
    pub parameter_count: usize,
    pub warmup: usize,
    pub trials: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Times `trials` eval-mode forward passes on one random window after
/// `warmup` untimed passes.
pub fn latency_bench(model: &Model<f32>, trials: usize, warmup: usize, seed: u64) -> Result<LatencyReport> {
    if trials == 0 {
        return Err(NnError::Config("latency bench needs at least one trial".into()));
    }
    if warmup < MIN_WARMUP {
        return Err(NnError::Config(format!("latency bench needs at least {MIN_WARMUP} warmup passes")));
    }
    let (t, f) = (model.config.window, model.config.features);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..t * f).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x = Tensor::from_vec(vec![1, t, f], data)?;
    for _ in 0..warmup {
        std::hint::black_box(model.logits(x.clone())?);
    }
    let mut ms = Vec::with_capacity(trials);
    for _ in 0..trials {
        let input = x.clone();
        let started = Instant::now();
        std::hint::black_box(model.logits(input)?);
        ms.push(started.elapsed().as_secs_f64() * 1e3);
    }
    ms.sort_by(f64::total_cmp);
    let n = ms.len();
    let median_ms = if n % 2 == 1 { ms[n / 2] } else { 0.5 * (ms[n / 2 - 1] + ms[n / 2]) };
    let p95_ms = ms[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
    Ok(LatencyReport {
        architecture: model.config.architecture.name().to_string(),
        window: t,
        features: f,
        parameter_count: model.parameter_count(),
        warmup,
        trials,
        median_ms,
        p95_ms,
        mean_ms: ms.iter().sum::<f64>() / n as f64,
        min_ms: ms[0],
        max_ms: ms[n - 1],
    })
}
