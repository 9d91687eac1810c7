use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lob::{Direction, EventKind, LobRecord, OrderEvent};

use super::{BundleSource, DatasetBundle};

/// Mid-price process of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Regime {
    /// Independent Gaussian log-returns.
    RandomWalk,
    /// AR(1) log-returns `r_t = drift + persistence * r_{t-1} + noise`, with
    /// noise scaled so the stationary return volatility matches the random walk.
    Momentum { drift: f64, persistence: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub levels: usize,
    pub start_price: f64,
    /// Standard deviation of one-step log-returns.
    pub volatility: f64,
    /// Price increment between book levels, in ten-thousandths.
    pub tick_units: i64,
    pub start_time: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            levels: 10,
            start_price: 100.0,
            volatility: 1e-4,
            tick_units: 100,
            start_time: 34_200.0,
        }
    }
}

/// Deterministic synthetic book for `(seed, n, regime)` with default settings.
pub fn synth_lob(seed: u64, n: usize, regime: Regime) -> Result<DatasetBundle> {
    synth_lob_with(seed, n, regime, &SynthConfig::default())
}

pub fn synth_lob_with(seed: u64, n: usize, regime: Regime, cfg: &SynthConfig) -> Result<DatasetBundle> {
    if n == 0 {
        return Err(Error::InvalidParameter("synthetic series needs n >= 1".into()));
    }
    if cfg.levels == 0 || cfg.tick_units <= 0 || !(cfg.start_price > 0.0) || !(cfg.volatility >= 0.0) {
        return Err(Error::InvalidParameter(format!("bad synthetic config {cfg:?}")));
    }
    let noise_scale = match regime {
        Regime::RandomWalk => 1.0,
        Regime::Momentum { persistence, .. } => {
            if !(persistence.abs() < 1.0) {
                return Err(Error::InvalidParameter(format!("persistence {persistence} must lie in (-1, 1)")));
            }
            (1.0 - persistence * persistence).sqrt()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tick = cfg.tick_units;
    let start_us = (cfg.start_time * 1e6).round() as i64;
    let mut elapsed_us: i64 = 0;
    let mut log_mid = cfg.start_price.ln();
    let mut prev_ret = 0.0;
    let mut snapshots = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);

    for i in 0..n {
        if i > 0 {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let ret = match regime {
                Regime::RandomWalk => cfg.volatility * eps,
                Regime::Momentum { drift, persistence } => {
                    drift + persistence * prev_ret + cfg.volatility * noise_scale * eps
                }
            };
            prev_ret = ret;
            log_mid += ret;
            elapsed_us += rng.random_range(10_000..1_000_000);
        }
        let spread_ticks = match rng.random_range(0..10) {
            0..=5 => 1,
            6..=8 => 2,
            _ => 3,
        };
        let spread = spread_ticks * tick;
        let mid_units = log_mid.exp() * 1e4;
        let bid1 = ((mid_units - spread as f64 / 2.0).round() as i64).max(1);
        let ask1 = bid1 + spread;

        let mut ask_u = Vec::with_capacity(cfg.levels);
        let mut bid_u = Vec::with_capacity(cfg.levels);
        let (mut a, mut b) = (ask1, bid1);
        for _ in 0..cfg.levels {
            ask_u.push(a);
            bid_u.push(b);
            a += tick * rng.random_range(1..=3);
            b -= tick * rng.random_range(1..=3);
        }
        if *bid_u.last().unwrap() <= 0 {
            return Err(Error::InvalidParameter(format!(
                "start price {} too low for {} levels",
                cfg.start_price, cfg.levels
            )));
        }
        let mut vol = || 100.0 * f64::from(rng.random_range(1..=20u32));
        let ask_volumes = (0..cfg.levels).map(|_| vol()).collect();
        let bid_volumes = (0..cfg.levels).map(|_| vol()).collect();
        let timestamp = (start_us + elapsed_us) as f64 / 1e6;
        snapshots.push(LobRecord::new(
            timestamp,
            ask_u.iter().map(|&u| u as f64 / 1e4).collect(),
            ask_volumes,
            bid_u.iter().map(|&u| u as f64 / 1e4).collect(),
            bid_volumes,
        ));

        let kind = match rng.random_range(0..20) {
            0..=9 => EventKind::Submission,
            10..=14 => EventKind::Cancellation,
            15 => EventKind::Deletion,
            16..=18 => EventKind::ExecutionVisible,
            _ => EventKind::ExecutionHidden,
        };
        let direction = if rng.random_bool(0.5) { Direction::Buy } else { Direction::Sell };
        let price_units = match (kind.is_execution(), direction) {
            (true, Direction::Buy) => ask1,
            (true, Direction::Sell) => bid1,
            (false, Direction::Buy) => bid_u[rng.random_range(0..cfg.levels)],
            (false, Direction::Sell) => ask_u[rng.random_range(0..cfg.levels)],
        };
        events.push(OrderEvent {
            timestamp,
            kind,
            order_id: i as u64 + 1,
            size: 100.0 * f64::from(rng.random_range(1..=5u32)),
            price: price_units as f64 / 1e4,
            direction,
        });
    }
    let mut bundle = DatasetBundle::from_snapshots(snapshots, BundleSource::Synthetic { seed, n, regime })?;
    bundle.events = Some(events);
    Ok(bundle)
}
