use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::DatasetBundle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SplitMode {
    /// Portions of the row count, rounded to the nearest row.
    ByFraction { train: f64, val: f64, test: f64 },
    /// Whole sessions; a session starts wherever the timestamp goes backwards.
    ByDayCount { train: usize, val: usize, test: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(flatten)]
    pub mode: SplitMode,
    /// Label look-ahead in rows. The last `horizon` rows of the train and
    /// validation partitions are dropped so no label window spans a boundary.
    #[serde(default)]
    pub horizon: usize,
}

impl SplitSpec {
    pub fn fractions(train: f64, val: f64, test: f64, horizon: usize) -> Self {
        Self {
            mode: SplitMode::ByFraction { train, val, test },
            horizon,
        }
    }

    pub fn days(train: usize, val: usize, test: usize, horizon: usize) -> Self {
        Self {
            mode: SplitMode::ByDayCount { train, val, test },
            horizon,
        }
    }
}

/// Row ranges of the three partitions, boundary rows already removed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

fn raw_ranges(bundle: &DatasetBundle, mode: SplitMode) -> Result<[Range<usize>; 3]> {
    let n = bundle.len();
    match mode {
        SplitMode::ByFraction { train, val, test } => {
            for (name, f) in [("train", train), ("val", val), ("test", test)] {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::InvalidParameter(format!("{name} fraction {f} must lie in (0, 1]")));
                }
            }
            if train + val + test > 1.0 + 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "fractions {train}/{val}/{test} sum to more than 1"
                )));
            }
            let count = |f: f64| (n as f64 * f).round() as usize;
            let a = count(train).min(n);
            let b = (a + count(val)).min(n);
            let c = (b + count(test)).min(n);
            Ok([0..a, a..b, b..c])
        }
        SplitMode::ByDayCount { train, val, test } => {
            if train == 0 || val == 0 || test == 0 {
                return Err(Error::InvalidParameter("day counts must be positive".into()));
            }
            let sessions = bundle.sessions();
            let available = sessions.last().map_or(0, |s| s + 1);
            if train + val + test > available {
                return Err(Error::InvalidParameter(format!(
                    "split needs {} sessions, data has {available}",
                    train + val + test
                )));
            }
            let start_of = |s: usize| sessions.partition_point(|&x| x < s);
            let a = start_of(train);
            let b = start_of(train + val);
            let c = start_of(train + val + test);
            Ok([0..a, a..b, b..c])
        }
    }
}

pub fn plan_split(bundle: &DatasetBundle, spec: &SplitSpec) -> Result<SplitPlan> {
    let [train, val, test] = raw_ranges(bundle, spec.mode)?;
    let trim = |r: Range<usize>| r.start..r.end.saturating_sub(spec.horizon).max(r.start);
    let plan = SplitPlan {
        train: trim(train),
        val: trim(val),
        test,
    };
    for (name, r) in [("train", &plan.train), ("val", &plan.val), ("test", &plan.test)] {
        if r.is_empty() {
            return Err(Error::Empty(match name {
                "train" => "train partition",
                "val" => "validation partition",
                _ => "test partition",
            }));
        }
    }
    Ok(plan)
}

/// Contiguous chronological train/validation/test partitions.
pub fn split_chronological(bundle: &DatasetBundle, spec: &SplitSpec) -> Result<(DatasetBundle, DatasetBundle, DatasetBundle)> {
    let plan = plan_split(bundle, spec)?;
    Ok((
        bundle.slice(plan.train, "split:train"),
        bundle.slice(plan.val, "split:val"),
        bundle.slice(plan.test, "split:test"),
    ))
}

#[cfg(test)]
mod tests {
    use super::super::test_support::ramp;
    use super::*;

    fn sizes(n: usize, spec: SplitSpec) -> (usize, usize, usize) {
        let (a, b, c) = split_chronological(&ramp(n), &spec).unwrap();
        (a.len(), b.len(), c.len())
    }

    #[test]
    fn fraction_sizes() {
        assert_eq!(sizes(100, SplitSpec::fractions(0.8, 0.1, 0.1, 0)), (80, 10, 10));
        assert_eq!(sizes(10, SplitSpec::fractions(0.5, 0.2, 0.3, 0)), (5, 2, 3));
    }

    #[test]
    fn horizon_drops_boundary_rows_from_earlier_partitions() {
        let b = ramp(100);
        let plan = plan_split(&b, &SplitSpec::fractions(0.8, 0.1, 0.1, 3)).unwrap();
        assert_eq!(plan, SplitPlan { train: 0..77, val: 80..87, test: 90..100 });
    }

    #[test]
    fn day_mode_follows_sessions() {
        let mut b = ramp(9);
        for (i, r) in b.snapshots.iter_mut().enumerate() {
            r.timestamp = (i % 3) as f64;
        }
        let (tr, va, te) = split_chronological(&b, &SplitSpec::days(1, 1, 1, 0)).unwrap();
        assert_eq!(tr.snapshots[0].bid_prices, ramp(9).snapshots[0].bid_prices);
        assert_eq!((tr.len(), va.len(), te.len()), (3, 3, 3));
        assert_eq!(va.snapshots[0].bid_prices, ramp(9).snapshots[3].bid_prices);
        assert!(split_chronological(&b, &SplitSpec::days(2, 1, 1, 0)).is_err());
    }

    #[test]
    fn empty_partition_is_an_error() {
        assert!(split_chronological(&ramp(3), &SplitSpec::fractions(0.9, 0.05, 0.05, 0)).is_err());
        assert!(split_chronological(&ramp(20), &SplitSpec::fractions(0.5, 0.2, 0.3, 4)).is_err());
    }
}
