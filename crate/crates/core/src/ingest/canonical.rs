use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lob::{Direction, EventKind, OrderEvent, TrendLabel};

use super::generic::{read_snapshot_csv, snapshot_header};
use super::lobster::field_f64;
use super::{BundleSource, DatasetBundle, FeatureMatrix};

pub const CANONICAL_FORMAT_VERSION: u32 = 1;

const SNAPSHOTS: &str = "snapshots.csv";
const EVENTS: &str = "events.csv";
const FEATURES: &str = "extra_features.csv";
const LABELS: &str = "labels.csv";
const SIDECAR: &str = "bundle.json";
const EVENT_COLUMNS: [&str; 6] = ["timestamp", "kind", "order_id", "size", "price", "direction"];

/// JSON sidecar describing a canonical bundle directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub format_version: u32,
    pub levels: usize,
    pub rows: usize,
    /// Multiplier from stored price values to monetary units.
    pub price_scale: f64,
    pub files: BTreeMap<String, Vec<String>>,
    pub source: BundleSource,
    pub transforms: Vec<String>,
}

// Debug formatting of f64 is the shortest string that parses back to the same bits.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn label_column(h: usize) -> String {
    format!("h_{h}")
}

/// Writes `bundle` as one CSV per part plus `bundle.json` into `dir`.
pub fn write_bundle(dir: &Path, bundle: &DatasetBundle) -> Result<BundleMeta> {
    bundle.check_shape()?;
    fs::create_dir_all(dir)?;
    let mut files = BTreeMap::new();

    let header = snapshot_header(bundle.levels());
    let mut w = csv::Writer::from_path(dir.join(SNAPSHOTS))?;
    w.write_record(&header)?;
    for r in &bundle.snapshots {
        let mut row = vec![num(r.timestamp)];
        row.extend(r.interleaved().into_iter().map(num));
        w.write_record(&row)?;
    }
    w.flush()?;
    files.insert(SNAPSHOTS.to_string(), header);

    if let Some(events) = &bundle.events {
        let mut w = csv::Writer::from_path(dir.join(EVENTS))?;
        w.write_record(EVENT_COLUMNS)?;
        for e in events {
            w.write_record([
                num(e.timestamp),
                e.kind.code().to_string(),
                e.order_id.to_string(),
                num(e.size),
                num(e.price),
                e.direction.sign().to_string(),
            ])?;
        }
        w.flush()?;
        files.insert(EVENTS.to_string(), EVENT_COLUMNS.iter().map(|s| s.to_string()).collect());
    }

    if let Some(x) = &bundle.extra_features {
        let header: Vec<String> = (0..x.cols).map(|c| format!("f{c}")).collect();
        let mut w = csv::Writer::from_path(dir.join(FEATURES))?;
        w.write_record(&header)?;
        for r in 0..x.rows() {
            w.write_record(x.row(r).iter().map(|&v| num(v)))?;
        }
        w.flush()?;
        files.insert(FEATURES.to_string(), header);
    }

    if let Some(labels) = &bundle.provided_labels {
        let header: Vec<String> = labels.keys().map(|&h| label_column(h)).collect();
        let mut w = csv::Writer::from_path(dir.join(LABELS))?;
        w.write_record(&header)?;
        for t in 0..bundle.len() {
            w.write_record(labels.values().map(|v| v[t].map_or(String::new(), |l| l.index().to_string())))?;
        }
        w.flush()?;
        files.insert(LABELS.to_string(), header);
    }

    let meta = BundleMeta {
        format_version: CANONICAL_FORMAT_VERSION,
        levels: bundle.levels(),
        rows: bundle.len(),
        price_scale: 1.0,
        files,
        source: bundle.source.clone(),
        transforms: bundle.transforms.clone(),
    };
    fs::write(dir.join(SIDECAR), serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

fn read_table(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        out.push((i + 2, rec?));
    }
    Ok(out)
}

fn parse_int(path: &Path, line: usize, s: &str) -> Result<i64> {
    s.parse().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line,
        message: format!("expected an integer, got {s:?}"),
    })
}

/// Reads a directory written by [`write_bundle`].
pub fn read_bundle(dir: &Path) -> Result<DatasetBundle> {
    let meta: BundleMeta = serde_json::from_str(&fs::read_to_string(dir.join(SIDECAR))?)?;
    if meta.format_version != CANONICAL_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported canonical format version {}",
            meta.format_version
        )));
    }
    let snapshots = read_snapshot_csv(&dir.join(SNAPSHOTS), meta.levels)?;
    let mut bundle = DatasetBundle::from_snapshots(snapshots, meta.source.clone())?;
    bundle.transforms = meta.transforms.clone();

    if meta.files.contains_key(EVENTS) {
        let path = dir.join(EVENTS);
        let mut events = Vec::new();
        for (line, rec) in read_table(&path)? {
            let bad = |m: &str| Error::Parse {
                path: path.display().to_string(),
                line,
                message: m.to_string(),
            };
            if rec.len() != EVENT_COLUMNS.len() {
                return Err(bad("wrong number of event columns"));
            }
            events.push(OrderEvent {
                timestamp: field_f64(&path, line, 0, &rec[0])?,
                kind: EventKind::from_code(parse_int(&path, line, &rec[1])?).ok_or_else(|| bad("unknown event kind"))?,
                order_id: rec[2].parse().map_err(|_| bad("bad order id"))?,
                size: field_f64(&path, line, 3, &rec[3])?,
                price: field_f64(&path, line, 4, &rec[4])?,
                direction: Direction::from_sign(parse_int(&path, line, &rec[5])?).ok_or_else(|| bad("bad direction"))?,
            });
        }
        bundle.events = Some(events);
    }

    if let Some(header) = meta.files.get(FEATURES) {
        let path = dir.join(FEATURES);
        let mut data = Vec::new();
        for (line, rec) in read_table(&path)? {
            for (c, s) in rec.iter().enumerate() {
                data.push(field_f64(&path, line, c, s)?);
            }
        }
        bundle.extra_features = Some(FeatureMatrix::new(header.len(), data)?);
    }

    if let Some(header) = meta.files.get(LABELS) {
        let path = dir.join(LABELS);
        let horizons = header
            .iter()
            .map(|c| {
                c.strip_prefix("h_")
                    .and_then(|h| h.parse::<usize>().ok())
                    .ok_or_else(|| Error::Format(format!("bad label column {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cols: Vec<Vec<Option<TrendLabel>>> = vec![Vec::new(); horizons.len()];
        for (line, rec) in read_table(&path)? {
            for (j, s) in rec.iter().enumerate() {
                let l = if s.is_empty() {
                    None
                } else {
                    let i = parse_int(&path, line, s)?;
                    Some(
                        usize::try_from(i)
                            .ok()
                            .and_then(TrendLabel::from_index)
                            .ok_or_else(|| Error::Format(format!("label {i} outside 0..=2")))?,
                    )
                };
                cols[j].push(l);
            }
        }
        bundle.provided_labels = Some(horizons.into_iter().zip(cols).collect());
    }
    bundle.check_shape()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::super::{synth_lob, Regime};
    use super::*;

    #[test]
    fn synthetic_round_trip() {
        let mut b = synth_lob(3, 50, Regime::Momentum { drift: 1e-5, persistence: 0.5 }).unwrap();
        b.extra_features = Some(FeatureMatrix::new(2, (0..100).map(|i| (i as f64).sqrt() * 1e-7).collect()).unwrap());
        let mut labels = BTreeMap::new();
        labels.insert(5, (0..50).map(|i| TrendLabel::from_index(i % 4)).collect());
        b.provided_labels = Some(labels);
        let dir = tempfile::tempdir().unwrap();
        let meta = write_bundle(dir.path(), &b).unwrap();
        assert_eq!(meta.levels, 10);
        assert_eq!(read_bundle(dir.path()).unwrap(), b);
    }
}
