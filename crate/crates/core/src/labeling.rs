//! Trend labels from mid-price series: the FI-2010 rule, symmetric smoothing
//! and the decoupled horizon/window rule, plus threshold selection.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lob::{LobRecord, MidPriceSeries, TrendLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMethod {
    Fi2010,
    SymmetricSmoothing,
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaPolicy {
    Explicit,
    /// Mean of |l| over the training rows.
    BalancedMeanAbs,
    /// Mean relative spread over the training rows.
    AvgSpread,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelingSpec {
    pub method: LabelMethod,
    pub horizon: usize,
    #[serde(default)]
    pub window: usize,
    #[serde(default)]
    pub theta: f64,
    pub theta_policy: ThetaPolicy,
}

impl LabelingSpec {
    pub fn decoupled(horizon: usize, window: usize, theta_policy: ThetaPolicy) -> Self {
        Self {
            method: LabelMethod::Decoupled,
            horizon,
            window,
            theta: 0.0,
            theta_policy,
        }
    }

    /// Applies the forced `k = h` of the FI-2010 and symmetric methods and
    /// checks the remaining constraints.
    pub fn normalized(mut self) -> Result<Self> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon h must be at least 1".into()));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("theta {} must be finite and >= 0", self.theta)));
        }
        match self.method {
            LabelMethod::Fi2010 | LabelMethod::SymmetricSmoothing => self.window = self.horizon,
            LabelMethod::Decoupled => check_window(self.horizon, self.window)?,
        }
        Ok(self)
    }

    /// Rows after the last labeled row that a future window reaches into.
    pub fn look_ahead(&self) -> usize {
        self.horizon
    }

    /// Raw percentage changes and their valid range for this method.
    pub fn raw(&self, p: &MidPriceSeries) -> Result<(Vec<f64>, Range<usize>)> {
        let s = self.normalized()?;
        match s.method {
            LabelMethod::Fi2010 => raw_fi2010(p.values(), s.horizon),
            LabelMethod::SymmetricSmoothing => raw_symmetric(p.values(), s.horizon),
            LabelMethod::Decoupled => raw_decoupled(p.values(), s.horizon, s.window),
        }
    }
}

fn check_window(h: usize, k: usize) -> Result<()> {
    if k > h {
        return Err(Error::InvalidParameter(format!(
            "window k={k} exceeds horizon h={h}: the future window would reach back past t and overlap the past window"
        )));
    }
    Ok(())
}

/// Labels for the rows `valid_range` of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    pub labels: Vec<TrendLabel>,
    pub raw_l: Vec<f64>,
    pub valid_range: Range<usize>,
    pub theta: f64,
}

impl LabeledSeries {
    fn classify(raw_l: Vec<f64>, valid_range: Range<usize>, theta: f64) -> Self {
        let labels = raw_l.iter().map(|&l| classify_trend(l, theta)).collect();
        Self {
            labels,
            raw_l,
            valid_range,
            theta,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Label at series index `t`, if `t` is in the valid range.
    pub fn at(&self, t: usize) -> Option<TrendLabel> {
        self.valid_range.contains(&t).then(|| self.labels[t - self.valid_range.start])
    }

    pub fn raw_at(&self, t: usize) -> Option<f64> {
        self.valid_range.contains(&t).then(|| self.raw_l[t - self.valid_range.start])
    }

    /// Labels spread over a full series of length `n`.
    pub fn aligned(&self, n: usize) -> Vec<Option<TrendLabel>> {
        (0..n).map(|t| self.at(t)).collect()
    }
}

/// `mean(p[t..=t+w])` for every `t` where the window fits, summed from `t` upward.
fn forward_means(p: &[f64], w: usize) -> Vec<f64> {
    let denom = (w + 1) as f64;
    (0..p.len().saturating_sub(w))
        .map(|t| p[t..=t + w].iter().sum::<f64>() / denom)
        .collect()
}

/// `mean(p[e-w..=e])` indexed by `e - w`, summed from `e` downward.
fn backward_means(p: &[f64], w: usize) -> Vec<f64> {
    let denom = (w + 1) as f64;
    (w..p.len())
        .map(|e| p[e - w..=e].iter().rev().sum::<f64>() / denom)
        .collect()
}

fn raw_fi2010(p: &[f64], h: usize) -> Result<(Vec<f64>, Range<usize>)> {
    let n = p.len();
    if n <= h {
        return Err(Error::TooShort { op: "label_fi2010", needed: h, got: n });
    }
    let plus = forward_means(p, h);
    let range = 0..n - h;
    Ok((range.clone().map(|t| (plus[t] - p[t]) / p[t]).collect(), range))
}

fn raw_symmetric(p: &[f64], k: usize) -> Result<(Vec<f64>, Range<usize>)> {
    let n = p.len();
    if n <= 2 * k {
        return Err(Error::TooShort { op: "label_symmetric", needed: 2 * k, got: n });
    }
    let plus = forward_means(p, k);
    let minus = backward_means(p, k);
    let range = k..n - k;
    Ok((range.clone().map(|t| (plus[t] - minus[t - k]) / minus[t - k]).collect(), range))
}

fn raw_decoupled(p: &[f64], h: usize, k: usize) -> Result<(Vec<f64>, Range<usize>)> {
    check_window(h, k)?;
    let n = p.len();
    if n <= h + k {
        return Err(Error::TooShort { op: "label_decoupled", needed: h + k, got: n });
    }
    let plus = forward_means(p, k);
    let minus = backward_means(p, k);
    let range = k..n - h;
    Ok((range.clone().map(|t| (plus[t + h - k] - minus[t - k]) / minus[t - k]).collect(), range))
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::InvalidParameter(format!("theta {theta} must be finite and >= 0")));
    }
    Ok(())
}

/// `l(t) = (mean(p[t..=t+h]) - p(t)) / p(t)` for `t` in `0..N-h`.
pub fn label_fi2010(p: &MidPriceSeries, h: usize, theta: f64) -> Result<LabeledSeries> {
    check_theta(theta)?;
    let (raw, range) = raw_fi2010(p.values(), h)?;
    Ok(LabeledSeries::classify(raw, range, theta))
}

/// `l(t) = (m+ - m-) / m-` with `m+ = mean(p[t..=t+k])`, `m- = mean(p[t-k..=t])`,
/// for `t` in `k..N-k`.
pub fn label_symmetric(p: &MidPriceSeries, k: usize, theta: f64) -> Result<LabeledSeries> {
    check_theta(theta)?;
    let (raw, range) = raw_symmetric(p.values(), k)?;
    Ok(LabeledSeries::classify(raw, range, theta))
}

/// `l(t) = (w+ - w-) / w-` with `w+ = mean(p[t+h-k..=t+h])`,
/// `w- = mean(p[t-k..=t])`, for `t` in `k..N-h`. Requires `k <= h`.
pub fn label_decoupled(p: &MidPriceSeries, h: usize, k: usize, theta: f64) -> Result<LabeledSeries> {
    check_theta(theta)?;
    let (raw, range) = raw_decoupled(p.values(), h, k)?;
    Ok(LabeledSeries::classify(raw, range, theta))
}

/// `U` above `theta`, `D` below `-theta`, `S` on the closed band between.
pub fn classify_trend(l: f64, theta: f64) -> TrendLabel {
    if l > theta {
        TrendLabel::Up
    } else if l < -theta {
        TrendLabel::Down
    } else {
        TrendLabel::Stable
    }
}

/// Mean absolute percentage change.
pub fn theta_balanced(raw_l: &[f64]) -> Result<f64> {
    if raw_l.is_empty() {
        return Err(Error::Empty("theta_balanced"));
    }
    Ok(raw_l.iter().map(|l| l.abs()).sum::<f64>() / raw_l.len() as f64)
}

/// Mean relative spread.
pub fn theta_spread(snapshots: &[LobRecord]) -> Result<f64> {
    if snapshots.is_empty() {
        return Err(Error::Empty("theta_spread"));
    }
    let mut sum = 0.0;
    for r in snapshots {
        sum += r.relative_spread()?;
    }
    Ok(sum / snapshots.len() as f64)
}

/// Label frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub up: f64,
    pub stable: f64,
    pub down: f64,
}

impl ClassDistribution {
    pub fn fraction(&self, l: TrendLabel) -> f64 {
        match l {
            TrendLabel::Up => self.up,
            TrendLabel::Stable => self.stable,
            TrendLabel::Down => self.down,
        }
    }
}

pub fn class_distribution(labels: &[TrendLabel]) -> Result<ClassDistribution> {
    if labels.is_empty() {
        return Err(Error::Empty("class_distribution"));
    }
    let mut c = [0usize; 3];
    for l in labels {
        c[l.index()] += 1;
    }
    let n = labels.len() as f64;
    Ok(ClassDistribution {
        up: c[TrendLabel::Up.index()] as f64 / n,
        stable: c[TrendLabel::Stable.index()] as f64 / n,
        down: c[TrendLabel::Down.index()] as f64 / n,
    })
}

/// Labels a series with `spec`, resolving a data-driven threshold from the
/// rows in `train_rows` only.
pub fn label_with_policy(
    p: &MidPriceSeries,
    snapshots: &[LobRecord],
    spec: &LabelingSpec,
    train_rows: Range<usize>,
) -> Result<LabeledSeries> {
    let (raw, range) = spec.raw(p)?;
    let theta = match spec.theta_policy {
        ThetaPolicy::Explicit => {
            check_theta(spec.theta)?;
            spec.theta
        }
        ThetaPolicy::BalancedMeanAbs => {
            let lo = train_rows.start.max(range.start);
            let hi = train_rows.end.min(range.end);
            if lo >= hi {
                return Err(Error::Empty("labeled training rows"));
            }
            theta_balanced(&raw[lo - range.start..hi - range.start])?
        }
        ThetaPolicy::AvgSpread => {
            let end = train_rows.end.min(snapshots.len());
            theta_spread(snapshots.get(train_rows.start..end).unwrap_or(&[]))?
        }
    };
    Ok(LabeledSeries::classify(raw, range, theta))
}
