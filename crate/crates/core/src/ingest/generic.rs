use std::path::Path;

use crate::error::{Error, Result};
use crate::lob::LobRecord;

use super::lobster::field_f64;
use super::{BundleSource, DatasetBundle};

/// Column names of a snapshot CSV with `levels` levels.
pub fn snapshot_header(levels: usize) -> Vec<String> {
    let mut h = vec!["timestamp".to_string()];
    for i in 1..=levels {
        h.push(format!("ask_price_{i}"));
        h.push(format!("ask_size_{i}"));
        h.push(format!("bid_price_{i}"));
        h.push(format!("bid_size_{i}"));
    }
    h
}

pub(crate) fn read_snapshot_csv(path: &Path, levels: usize) -> Result<Vec<LobRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = rdr.headers()?.clone();
    let mut idx = Vec::new();
    for name in snapshot_header(levels) {
        let pos = header.iter().position(|h| h == name).ok_or_else(|| {
            Error::Format(format!("{}: missing column {name:?}", path.display()))
        })?;
        idx.push(pos);
    }
    let mut out = Vec::new();
    let mut row = vec![0.0; 4 * levels];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let cell = |c: usize| -> Result<f64> {
            let s = rec.get(idx[c]).ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line,
                message: format!("row has {} fields", rec.len()),
            })?;
            field_f64(path, line, idx[c], s)
        };
        let ts = cell(0)?;
        for (j, v) in row.iter_mut().enumerate() {
            *v = cell(j + 1)?;
        }
        out.push(LobRecord::from_interleaved(ts, &row)?);
    }
    Ok(out)
}

/// Parses a headered snapshot CSV (`timestamp`, `ask_price_1`,
/// `ask_size_1`, `bid_price_1`, `bid_size_1`, ...). Extra columns are ignored.
pub fn parse_generic_snapshots(path: &Path, levels: usize, strict: bool) -> Result<DatasetBundle> {
    if levels == 0 {
        return Err(Error::InvalidParameter("levels must be at least 1".into()));
    }
    let snaps = read_snapshot_csv(path, levels)?;
    let bundle = DatasetBundle::from_snapshots(
        snaps,
        BundleSource::GenericSnapshots {
            file: path.display().to_string(),
        },
    )?;
    bundle.enforce(strict)?;
    Ok(bundle)
}
