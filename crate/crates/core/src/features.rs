//! Per-row feature assembly and sliding windows over labeled series.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DatasetBundle;
use crate::lob::{EventKind, TrendLabel};

/// Extra per-row columns appended by [`FeatureAssembly::LobOrders`].
pub const ORDER_COLUMNS: usize = 6;
pub const HANDCRAFTED_COLUMNS: usize = 104;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureAssembly {
    /// `4L` interleaved prices and volumes.
    LobOnly,
    /// LOB columns followed by the bundle's auxiliary feature matrix.
    LobHandcrafted,
    /// LOB columns followed by the aligned order event: one-hot kind
    /// (submission, cancellation or deletion, execution, halt), signed size,
    /// and price relative to the mid-price.
    LobOrders,
}

impl FeatureAssembly {
    pub fn width(self, levels: usize, extra_cols: usize) -> usize {
        match self {
            Self::LobOnly => 4 * levels,
            Self::LobHandcrafted => 4 * levels + extra_cols,
            Self::LobOrders => 4 * levels + ORDER_COLUMNS,
        }
    }
}

fn order_columns(kind: EventKind) -> [f64; 4] {
    match kind {
        EventKind::Submission => [1.0, 0.0, 0.0, 0.0],
        EventKind::Cancellation | EventKind::Deletion => [0.0, 1.0, 0.0, 0.0],
        EventKind::ExecutionVisible | EventKind::ExecutionHidden => [0.0, 0.0, 1.0, 0.0],
        EventKind::Halt => [0.0, 0.0, 0.0, 1.0],
    }
}

/// Row-major `[rows, width]` feature matrix for a bundle.
pub fn feature_rows(bundle: &DatasetBundle, assembly: FeatureAssembly) -> Result<(Vec<f64>, usize)> {
    let extra_cols = bundle.extra_features.as_ref().map_or(0, |x| x.cols);
    let width = assembly.width(bundle.levels(), extra_cols);
    let mut out = Vec::with_capacity(bundle.len() * width);
    for t in 0..bundle.len() {
        let rec = &bundle.snapshots[t];
        out.extend(rec.interleaved());
        match assembly {
            FeatureAssembly::LobOnly => {}
            FeatureAssembly::LobHandcrafted => {
                let x = bundle
                    .extra_features
                    .as_ref()
                    .ok_or_else(|| Error::Unsupported("lob+handcrafted needs auxiliary features".into()))?;
                out.extend_from_slice(x.row(t));
            }
            FeatureAssembly::LobOrders => {
                let ev = bundle
                    .events
                    .as_ref()
                    .ok_or_else(|| Error::Unsupported("lob+orders needs an event stream".into()))?;
                let e = &ev[t];
                let mid = rec.mid_price()?;
                out.extend(order_columns(e.kind));
                out.push(e.size * e.direction.sign() as f64);
                out.push(if e.kind == EventKind::Halt { 0.0 } else { (e.price - mid) / mid });
            }
        }
    }
    Ok((out, width))
}

/// Windows of `window` consecutive rows ending at each labeled row.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    rows: Arc<[f64]>,
    width: usize,
    window: usize,
    /// Index of the last row of each window.
    pub ends: Vec<usize>,
    pub labels: Vec<TrendLabel>,
}

impl WindowSet {
    /// Builds windows from an explicit feature matrix and per-row labels.
    pub fn from_rows(rows: Vec<f64>, width: usize, window: usize, labels: &[Option<TrendLabel>]) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidParameter("window length T must be at least 1".into()));
        }
        if width == 0 || rows.len() != labels.len() * width {
            return Err(Error::Format(format!(
                "{} feature values for {} rows of width {width}",
                rows.len(),
                labels.len()
            )));
        }
        let mut ends = Vec::new();
        let mut out = Vec::new();
        for (t, l) in labels.iter().enumerate().skip(window - 1) {
            if let Some(l) = l {
                ends.push(t);
                out.push(*l);
            }
        }
        if ends.is_empty() {
            return Err(Error::TooShort { op: "assemble_features", needed: window, got: labels.len() });
        }
        Ok(Self {
            rows: rows.into(),
            width,
            window,
            ends,
            labels: out,
        })
    }

    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Values of window `i`, `[T, F]` row-major.
    pub fn window_values(&self, i: usize) -> &[f64] {
        let end = self.ends[i] + 1;
        &self.rows[(end - self.window) * self.width..end * self.width]
    }

    /// Appends the selected windows as a `[B, T, F]` block.
    pub fn gather(&self, idx: &[usize], out: &mut Vec<f64>) {
        out.reserve(idx.len() * self.window * self.width);
        for &i in idx {
            out.extend_from_slice(self.window_values(i));
        }
    }

    pub fn gather_labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i].index()).collect()
    }

    /// Windows lying entirely inside `rows`.
    pub fn within(&self, rows: std::ops::Range<usize>) -> Self {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.ends[i] + 1 >= rows.start + self.window && self.ends[i] < rows.end)
            .collect();
        self.subset(&idx)
    }

    /// Keeps only the listed windows.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            rows: self.rows.clone(),
            width: self.width,
            window: self.window,
            ends: idx.iter().map(|&i| self.ends[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Windows over `bundle` using its provided labels at `horizon`.
pub fn assemble_features(bundle: &DatasetBundle, assembly: FeatureAssembly, window: usize, horizon: usize) -> Result<WindowSet> {
    let labels = bundle
        .provided_labels
        .as_ref()
        .and_then(|m| m.get(&horizon))
        .ok_or_else(|| Error::Unsupported(format!("bundle has no labels for horizon {horizon}")))?;
    let (rows, width) = feature_rows(bundle, assembly)?;
    WindowSet::from_rows(rows, width, window, labels)
}
