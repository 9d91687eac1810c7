//! Dataset bundles, external-format parsers, the synthetic generator and
//! chronological splitting.

mod canonical;
mod fi2010;
mod generic;
mod lobster;
mod split;
mod synth;

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lob::{validate_series, LobRecord, MidPriceSeries, OrderEvent, SeriesDiagnostics, TrendLabel};

pub use canonical::{read_bundle, write_bundle, BundleMeta, CANONICAL_FORMAT_VERSION};
pub use fi2010::{parse_fi2010_matrix, FI2010_HORIZONS, FI2010_ROWS};
pub use generic::{parse_generic_snapshots, snapshot_header};
pub use lobster::{parse_snapshot_message_pair, PRICE_SCALE};
pub use split::{plan_split, split_chronological, SplitMode, SplitPlan, SplitSpec};
pub use synth::{synth_lob, synth_lob_with, Regime, SynthConfig};

/// Row-major matrix of auxiliary per-snapshot columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 || data.len() % cols != 0 {
            return Err(Error::Format(format!(
                "feature matrix with {cols} columns cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self { cols, data })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn select(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self { cols: self.cols, data }
    }
}

/// Where a bundle came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BundleSource {
    Synthetic { seed: u64, n: usize, regime: Regime },
    SnapshotMessagePair { orderbook: String, message: String },
    Fi2010 { file: String },
    GenericSnapshots { file: String },
    Unknown,
}

/// Canonical in-memory dataset: snapshots plus optional aligned extras.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub snapshots: Vec<LobRecord>,
    pub events: Option<Vec<OrderEvent>>,
    pub extra_features: Option<FeatureMatrix>,
    /// Labels per horizon; `None` where a label is undefined.
    pub provided_labels: Option<BTreeMap<usize, Vec<Option<TrendLabel>>>>,
    pub source: BundleSource,
    /// Transformations applied since ingestion, oldest first.
    pub transforms: Vec<String>,
}

impl DatasetBundle {
    pub fn from_snapshots(snapshots: Vec<LobRecord>, source: BundleSource) -> Result<Self> {
        let b = Self {
            snapshots,
            events: None,
            extra_features: None,
            provided_labels: None,
            source,
            transforms: Vec::new(),
        };
        b.check_shape()?;
        Ok(b)
    }

    /// Checks the structural invariants tying the parts together.
    pub fn check_shape(&self) -> Result<()> {
        let n = self.snapshots.len();
        if n == 0 {
            return Err(Error::Empty("dataset bundle"));
        }
        if let Some(ev) = &self.events {
            if ev.len() != n {
                return Err(Error::Format(format!("{} events for {n} snapshots", ev.len())));
            }
        }
        if let Some(x) = &self.extra_features {
            if x.rows() != n {
                return Err(Error::Format(format!("{} feature rows for {n} snapshots", x.rows())));
            }
        }
        if let Some(labels) = &self.provided_labels {
            for (h, l) in labels {
                if l.len() != n {
                    return Err(Error::Format(format!("{} labels at h={h} for {n} snapshots", l.len())));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn levels(&self) -> usize {
        self.snapshots.first().map_or(0, LobRecord::levels)
    }

    pub fn diagnostics(&self) -> SeriesDiagnostics {
        validate_series(&self.snapshots)
    }

    /// Errors in strict mode when any invariant is violated; otherwise logs.
    pub fn enforce(&self, strict: bool) -> Result<SeriesDiagnostics> {
        let d = self.diagnostics();
        if !d.is_clean() {
            let first = d.violations[0];
            let first = format!("record {}: {}", first.index, first.invariant);
            if strict {
                return Err(Error::Strict { count: d.total(), first });
            }
            log::warn!("{} invariant violations, data marked degraded (first: {first})", d.total());
        }
        if d.timestamp_regressions > 0 {
            log::warn!("{} timestamp regressions (session boundaries?)", d.timestamp_regressions);
        }
        Ok(d)
    }

    pub fn mid_prices(&self) -> Result<MidPriceSeries> {
        MidPriceSeries::from_records(&self.snapshots)
    }

    /// Session index per row; a new session starts whenever time goes backwards.
    pub fn sessions(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        let mut s = 0;
        for (i, r) in self.snapshots.iter().enumerate() {
            if i > 0 && r.timestamp < self.snapshots[i - 1].timestamp {
                s += 1;
            }
            out.push(s);
        }
        out
    }

    /// Keeps the listed rows (in the given order) of every part.
    pub fn select_rows(&self, rows: &[usize], transform: impl Into<String>) -> Self {
        let pick = |v: &Vec<Option<TrendLabel>>| rows.iter().map(|&r| v[r]).collect();
        let mut transforms = self.transforms.clone();
        transforms.push(transform.into());
        Self {
            snapshots: rows.iter().map(|&r| self.snapshots[r].clone()).collect(),
            events: self.events.as_ref().map(|ev| rows.iter().map(|&r| ev[r].clone()).collect()),
            extra_features: self.extra_features.as_ref().map(|x| x.select(rows)),
            provided_labels: self
                .provided_labels
                .as_ref()
                .map(|l| l.iter().map(|(&h, v)| (h, pick(v))).collect()),
            source: self.source.clone(),
            transforms,
        }
    }

    pub fn slice(&self, range: Range<usize>, transform: impl Into<String>) -> Self {
        let rows: Vec<usize> = range.collect();
        self.select_rows(&rows, transform)
    }

    /// Feature row `t` in interleaved LOB order.
    pub fn lob_row(&self, t: usize) -> Vec<f64> {
        self.snapshots[t].interleaved()
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Small valid bundle with a linear price path.
    pub fn ramp(n: usize) -> DatasetBundle {
        let snaps = (0..n)
            .map(|i| {
                let bid = 100.0 + i as f64 * 0.01;
                LobRecord::new(i as f64, vec![bid + 0.02], vec![10.0], vec![bid], vec![12.0])
            })
            .collect();
        DatasetBundle::from_snapshots(snaps, BundleSource::Unknown).unwrap()
    }
}
