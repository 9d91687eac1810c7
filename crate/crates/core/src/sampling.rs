//! Event-count, wall-clock and traded-volume sampling of snapshot series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DatasetBundle;
use crate::lob::OrderEvent;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "param", rename_all = "kebab-case")]
pub enum SamplingSpec {
    EveryNEvents(usize),
    EveryDtSeconds(f64),
    EveryVShares(f64),
}

impl SamplingSpec {
    pub fn apply(&self, bundle: &DatasetBundle) -> Result<DatasetBundle> {
        match *self {
            Self::EveryNEvents(n) => sample_by_events(bundle, n),
            Self::EveryDtSeconds(dt) => sample_by_time(bundle, dt),
            Self::EveryVShares(v) => sample_by_volume(bundle, v),
        }
    }
}

/// Row indices kept by event-count sampling: `n-1, 2n-1, ...`.
pub fn event_indices(len: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidParameter("event interval must be at least 1".into()));
    }
    Ok((n - 1..len).step_by(n).collect())
}

/// Keeps every `n`-th row.
pub fn sample_by_events(bundle: &DatasetBundle, n: usize) -> Result<DatasetBundle> {
    let rows = event_indices(bundle.len(), n)?;
    if rows.is_empty() {
        return Err(Error::TooShort { op: "sample_by_events", needed: n - 1, got: bundle.len() });
    }
    Ok(bundle.select_rows(&rows, format!("sample:events:{n}")))
}

/// Row indices kept by time sampling over `timestamps`.
///
/// Each row is assigned to the first grid point `t0 + k*dt` (k >= 1) at or
/// after it, where `t0` is the session's first timestamp; the last row of
/// every non-empty grid cell is kept. A timestamp decrease starts a new
/// session with its own grid.
pub fn time_indices(timestamps: &[f64], dt: f64) -> Result<Vec<usize>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("time interval {dt} must be positive")));
    }
    let mut out = Vec::new();
    let mut t0 = f64::NAN;
    let mut current: Option<(u64, usize)> = None;
    for (i, &t) in timestamps.iter().enumerate() {
        if i == 0 || t < timestamps[i - 1] {
            if let Some((_, row)) = current.take() {
                out.push(row);
            }
            t0 = t;
        }
        // Tolerate representation error so a row exactly on a grid point stays there.
        let q = (t - t0) / dt;
        let cell = ((q - 1e-9 * q.max(1.0)).ceil() as u64).max(1);
        match current {
            Some((c, _)) if c == cell => current = Some((cell, i)),
            Some((_, row)) => {
                out.push(row);
                current = Some((cell, i));
            }
            None => current = Some((cell, i)),
        }
    }
    if let Some((_, row)) = current {
        out.push(row);
    }
    Ok(out)
}

/// Zero-order-hold sampling on a `dt`-second grid; empty cells emit nothing.
pub fn sample_by_time(bundle: &DatasetBundle, dt: f64) -> Result<DatasetBundle> {
    let ts: Vec<f64> = bundle.snapshots.iter().map(|r| r.timestamp).collect();
    let rows = time_indices(&ts, dt)?;
    Ok(bundle.select_rows(&rows, format!("sample:time:{dt}")))
}

/// Running counter of executed shares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeSampler {
    threshold: f64,
    counter: f64,
}

impl VolumeSampler {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold >= 1.0 && threshold.is_finite()) {
            return Err(Error::InvalidParameter(format!("volume threshold {threshold} must be at least 1")));
        }
        Ok(Self { threshold, counter: 0.0 })
    }

    /// Feeds one event; returns whether its snapshot is emitted.
    pub fn push(&mut self, event: &OrderEvent) -> bool {
        if !event.kind.is_execution() {
            return false;
        }
        self.counter += event.size;
        if self.counter >= self.threshold {
            self.counter %= self.threshold;
            true
        } else {
            false
        }
    }

    pub fn counter(&self) -> f64 {
        self.counter
    }
}

pub fn volume_indices(events: &[OrderEvent], v: f64) -> Result<Vec<usize>> {
    let mut s = VolumeSampler::new(v)?;
    Ok(events.iter().enumerate().filter(|(_, e)| s.push(e)).map(|(i, _)| i).collect())
}

/// Emits the snapshot aligned to each event where cumulative executed
/// volume crosses `v` shares.
pub fn sample_by_volume(bundle: &DatasetBundle, v: f64) -> Result<DatasetBundle> {
    let events = bundle
        .events
        .as_ref()
        .ok_or_else(|| Error::Unsupported("volume sampling needs an event stream".into()))?;
    let rows = volume_indices(events, v)?;
    if rows.is_empty() {
        return Err(Error::Empty("volume-sampled series"));
    }
    Ok(bundle.select_rows(&rows, format!("sample:volume:{v}")))
}
