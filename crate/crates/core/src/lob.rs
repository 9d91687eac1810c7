//! Snapshot and message-stream types plus elementary market quantities.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One `L`-level snapshot of the book.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobRecord {
    /// Seconds after midnight (fractional).
    pub timestamp: f64,
    pub ask_prices: Vec<f64>,
    pub ask_volumes: Vec<f64>,
    pub bid_prices: Vec<f64>,
    pub bid_volumes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Invariant {
    LevelCountMismatch,
    NonpositivePrice,
    NonpositiveVolume,
    AskLadderNotIncreasing,
    BidLadderNotDecreasing,
    CrossedBook,
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LevelCountMismatch => "level count mismatch",
            Self::NonpositivePrice => "nonpositive price",
            Self::NonpositiveVolume => "nonpositive volume",
            Self::AskLadderNotIncreasing => "ask prices not strictly increasing",
            Self::BidLadderNotDecreasing => "bid prices not strictly decreasing",
            Self::CrossedBook => "crossed book",
        })
    }
}

impl LobRecord {
    pub fn new(
        timestamp: f64,
        ask_prices: Vec<f64>,
        ask_volumes: Vec<f64>,
        bid_prices: Vec<f64>,
        bid_volumes: Vec<f64>,
    ) -> Self {
        Self {
            timestamp,
            ask_prices,
            ask_volumes,
            bid_prices,
            bid_volumes,
        }
    }

    /// Builds a record from the interleaved layout
    /// `(ask_p1, ask_v1, bid_p1, bid_v1, ask_p2, ...)`.
    pub fn from_interleaved(timestamp: f64, row: &[f64]) -> Result<Self> {
        if row.is_empty() || row.len() % 4 != 0 {
            return Err(Error::Format(format!(
                "interleaved row needs a positive multiple of 4 values, got {}",
                row.len()
            )));
        }
        let levels = row.len() / 4;
        let mut r = Self::new(
            timestamp,
            Vec::with_capacity(levels),
            Vec::with_capacity(levels),
            Vec::with_capacity(levels),
            Vec::with_capacity(levels),
        );
        for q in row.chunks_exact(4) {
            r.ask_prices.push(q[0]);
            r.ask_volumes.push(q[1]);
            r.bid_prices.push(q[2]);
            r.bid_volumes.push(q[3]);
        }
        Ok(r)
    }

    /// Inverse of [`LobRecord::from_interleaved`].
    pub fn interleaved(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * self.levels());
        for i in 0..self.levels() {
            out.extend([
                self.ask_prices[i],
                self.ask_volumes[i],
                self.bid_prices[i],
                self.bid_volumes[i],
            ]);
        }
        out
    }

    pub fn levels(&self) -> usize {
        self.ask_prices.len()
    }

    /// Every invariant class this record violates, each reported once.
    pub fn violations(&self) -> Vec<Invariant> {
        let mut out = Vec::new();
        let l = self.levels();
        if l == 0 || [self.ask_volumes.len(), self.bid_prices.len(), self.bid_volumes.len()] != [l; 3] {
            out.push(Invariant::LevelCountMismatch);
            return out;
        }
        let prices = self.ask_prices.iter().chain(&self.bid_prices);
        if prices.into_iter().any(|&p| !(p > 0.0)) {
            out.push(Invariant::NonpositivePrice);
        }
        if self.ask_volumes.iter().chain(&self.bid_volumes).any(|&v| !(v > 0.0)) {
            out.push(Invariant::NonpositiveVolume);
        }
        if self.ask_prices.windows(2).any(|w| !(w[1] > w[0])) {
            out.push(Invariant::AskLadderNotIncreasing);
        }
        if self.bid_prices.windows(2).any(|w| !(w[1] < w[0])) {
            out.push(Invariant::BidLadderNotDecreasing);
        }
        if !(self.ask_prices[0] > self.bid_prices[0]) {
            out.push(Invariant::CrossedBook);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().first() {
            Some(&invariant) => Err(Error::Invariant { index: 0, invariant }),
            None => Ok(()),
        }
    }

    pub fn best_ask(&self) -> f64 {
        self.ask_prices[0]
    }

    pub fn best_bid(&self) -> f64 {
        self.bid_prices[0]
    }

    /// `(best ask + best bid) / 2`.
    pub fn mid_price(&self) -> Result<f64> {
        self.validate()?;
        Ok(0.5 * (self.best_ask() + self.best_bid()))
    }

    /// Best-level spread as a fraction of the mid-price.
    pub fn relative_spread(&self) -> Result<f64> {
        let mid = self.mid_price()?;
        Ok((self.best_ask() - self.best_bid()) / mid)
    }

    /// Multiplies every price by `c`.
    pub fn scaled_prices(&self, c: f64) -> Self {
        let scale = |v: &[f64]| v.iter().map(|p| p * c).collect();
        Self {
            timestamp: self.timestamp,
            ask_prices: scale(&self.ask_prices),
            ask_volumes: self.ask_volumes.clone(),
            bid_prices: scale(&self.bid_prices),
            bid_volumes: self.bid_volumes.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub invariant: Invariant,
}

/// Per-invariant violation counts for a series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesDiagnostics {
    pub records: usize,
    pub counts: BTreeMap<Invariant, usize>,
    pub violations: Vec<Violation>,
    /// Timestamp decreases; expected at session boundaries, so not a violation.
    pub timestamp_regressions: usize,
}

impl SeriesDiagnostics {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, invariant: Invariant) -> usize {
        self.counts.get(&invariant).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.violations.len()
    }
}

pub fn validate_series(records: &[LobRecord]) -> SeriesDiagnostics {
    let mut d = SeriesDiagnostics {
        records: records.len(),
        ..Default::default()
    };
    let levels = records.first().map(LobRecord::levels);
    for (index, r) in records.iter().enumerate() {
        let mut found = r.violations();
        if Some(r.levels()) != levels && !found.contains(&Invariant::LevelCountMismatch) {
            found.insert(0, Invariant::LevelCountMismatch);
        }
        for invariant in found {
            *d.counts.entry(invariant).or_default() += 1;
            d.violations.push(Violation { index, invariant });
        }
        if index > 0 && r.timestamp < records[index - 1].timestamp {
            d.timestamp_regressions += 1;
        }
    }
    d
}

/// Mid-price per snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct MidPriceSeries(Vec<f64>);

impl MidPriceSeries {
    pub fn from_records(records: &[LobRecord]) -> Result<Self> {
        records
            .iter()
            .enumerate()
            .map(|(index, r)| {
                r.mid_price().map_err(|e| match e {
                    Error::Invariant { invariant, .. } => Error::Invariant { index, invariant },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    /// Wraps raw prices; every value must be positive and finite.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Invariant {
                index,
                invariant: Invariant::NonpositivePrice,
            });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Price trend class. The integer encoding is `D = 0, S = 1, U = 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrendLabel {
    Down = 0,
    Stable = 1,
    Up = 2,
}

impl TrendLabel {
    pub const ALL: [TrendLabel; 3] = [Self::Down, Self::Stable, Self::Up];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn symbol(self) -> char {
        match self {
            Self::Down => 'D',
            Self::Stable => 'S',
            Self::Up => 'U',
        }
    }
}

impl fmt::Display for TrendLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Submission,
    Cancellation,
    Deletion,
    ExecutionVisible,
    ExecutionHidden,
    Halt,
}

impl EventKind {
    pub fn from_code(code: i64) -> Option<Self> {
        Some(match code {
            1 => Self::Submission,
            2 => Self::Cancellation,
            3 => Self::Deletion,
            4 => Self::ExecutionVisible,
            5 => Self::ExecutionHidden,
            7 => Self::Halt,
            _ => return None,
        })
    }

    pub fn code(self) -> i64 {
        match self {
            Self::Submission => 1,
            Self::Cancellation => 2,
            Self::Deletion => 3,
            Self::ExecutionVisible => 4,
            Self::ExecutionHidden => 5,
            Self::Halt => 7,
        }
    }

    pub fn is_execution(self) -> bool {
        matches!(self, Self::ExecutionVisible | Self::ExecutionHidden)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Buy,
    Sell,
}

impl Direction {
    pub fn from_sign(sign: i64) -> Option<Self> {
        match sign {
            1 => Some(Self::Buy),
            -1 => Some(Self::Sell),
            _ => None,
        }
    }

    pub fn sign(self) -> i64 {
        match self {
            Self::Buy => 1,
            Self::Sell => -1,
        }
    }
}

/// One message-stream event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderEvent {
    pub timestamp: f64,
    pub kind: EventKind,
    pub order_id: u64,
    pub size: f64,
    pub price: f64,
    pub direction: Direction,
}

impl OrderEvent {
    pub fn validate(&self) -> Result<()> {
        if !(self.size >= 0.0) {
            return Err(Error::Format(format!("event size {} is negative", self.size)));
        }
        if self.kind != EventKind::Halt && !(self.price > 0.0) {
            return Err(Error::Format(format!("event price {} is not positive", self.price)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(ask: f64, bid: f64) -> LobRecord {
        LobRecord::new(0.0, vec![ask, ask + 0.01], vec![100.0, 50.0], vec![bid, bid - 0.01], vec![80.0, 40.0])
    }

    #[test]
    fn mid_price_examples() {
        assert_eq!(rec(101.0, 99.0).mid_price().unwrap(), 100.0);
        let eps = 0.125;
        assert_eq!(rec(42.0 + 2.0 * eps, 42.0).mid_price().unwrap(), 42.0 + eps);
        assert!((rec(230.46, 230.30).mid_price().unwrap() - 230.38).abs() < 1e-12);
    }

    #[test]
    fn relative_spread_examples() {
        assert!((rec(101.0, 99.0).relative_spread().unwrap() - 0.02).abs() < 1e-15);
        assert!((rec(100.01, 99.99).relative_spread().unwrap() - 0.0002).abs() < 1e-15);
        let rs = rec(230.46, 230.30).relative_spread().unwrap();
        assert!((rs - 0.16 / 230.38).abs() < 1e-12);
        assert!((rs - 6.945e-4).abs() < 1e-6);
    }

    #[test]
    fn mid_price_rejects_crossed_book_by_name() {
        let err = rec(99.0, 101.0).mid_price().unwrap_err().to_string();
        assert!(err.contains("crossed book"), "{err}");
    }

    #[test]
    fn series_diagnostics() {
        let clean = vec![rec(101.0, 99.0), rec(101.5, 99.5), rec(102.0, 100.0)];
        assert!(validate_series(&clean).is_clean());

        let mut crossed = clean.clone();
        crossed[2] = rec(99.0, 100.0);
        let d = validate_series(&crossed);
        assert_eq!(d.count(Invariant::CrossedBook), 1);
        assert_eq!(d.violations, vec![Violation { index: 2, invariant: Invariant::CrossedBook }]);

        let mut negative = clean;
        negative[1].bid_volumes[1] = -5.0;
        let d = validate_series(&negative);
        assert_eq!(d.total(), 1);
        assert_eq!(d.count(Invariant::NonpositiveVolume), 1);
    }

    #[test]
    fn level_mismatch_is_flagged() {
        let mut r = rec(101.0, 99.0);
        let short = LobRecord::new(1.0, vec![101.0], vec![1.0], vec![99.0], vec![1.0]);
        r.timestamp = 0.0;
        let d = validate_series(&[r, short]);
        assert_eq!(d.count(Invariant::LevelCountMismatch), 1);
    }

    #[test]
    fn label_encoding() {
        assert_eq!(TrendLabel::Down.index(), 0);
        assert_eq!(TrendLabel::Stable.index(), 1);
        assert_eq!(TrendLabel::Up.index(), 2);
        assert_eq!(TrendLabel::from_index(2), Some(TrendLabel::Up));
        assert_eq!(TrendLabel::from_index(3), None);
    }

    #[test]
    fn event_codes_round_trip() {
        for code in [1, 2, 3, 4, 5, 7] {
            assert_eq!(EventKind::from_code(code).unwrap().code(), code);
        }
        assert!(EventKind::from_code(6).is_none());
        assert!(EventKind::from_code(4).unwrap().is_execution());
    }
}
