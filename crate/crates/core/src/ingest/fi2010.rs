use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lob::{LobRecord, TrendLabel};

use super::lobster::field_f64;
use super::{BundleSource, DatasetBundle, FeatureMatrix};

/// Row count of the samples-as-columns matrix: 40 LOB + 104 handcrafted + 5 labels.
pub const FI2010_ROWS: usize = 149;
pub const FI2010_HORIZONS: [usize; 5] = [10, 20, 30, 50, 100];
const LOB_ROWS: usize = 40;
const EXTRA_ROWS: usize = 104;

fn label_from_code(v: f64) -> Option<TrendLabel> {
    match v {
        1.0 => Some(TrendLabel::Up),
        2.0 => Some(TrendLabel::Stable),
        3.0 => Some(TrendLabel::Down),
        _ => None,
    }
}

/// Parses a whitespace- or comma-separated matrix with one column per
/// sample. The sample index is used as the timestamp.
pub fn parse_fi2010_matrix(path: &Path, strict: bool) -> Result<DatasetBundle> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(FI2010_ROWS);
    for (i, line) in text.lines().enumerate() {
        let cells: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if cells.is_empty() {
            continue;
        }
        let row = cells
            .iter()
            .enumerate()
            .map(|(c, s)| field_f64(path, i + 1, c, s))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("expected {} columns, got {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.len() != FI2010_ROWS {
        return Err(Error::Format(format!(
            "{}: expected {FI2010_ROWS} rows (40 LOB + 104 handcrafted + 5 labels), got {}",
            path.display(),
            rows.len()
        )));
    }
    let n = rows[0].len();
    let mut snapshots = Vec::with_capacity(n);
    let mut col = vec![0.0; LOB_ROWS];
    for s in 0..n {
        for (r, v) in col.iter_mut().enumerate() {
            *v = rows[r][s];
        }
        snapshots.push(LobRecord::from_interleaved(s as f64, &col)?);
    }
    let mut extra = Vec::with_capacity(n * EXTRA_ROWS);
    for s in 0..n {
        extra.extend((LOB_ROWS..LOB_ROWS + EXTRA_ROWS).map(|r| rows[r][s]));
    }
    let mut labels = BTreeMap::new();
    for (j, &h) in FI2010_HORIZONS.iter().enumerate() {
        let row = &rows[LOB_ROWS + EXTRA_ROWS + j];
        let mut out = Vec::with_capacity(n);
        for (s, &v) in row.iter().enumerate() {
            let l = label_from_code(v).ok_or_else(|| {
                Error::Format(format!(
                    "{}: label {v} at horizon {h}, sample {s} is outside {{1, 2, 3}}",
                    path.display()
                ))
            })?;
            out.push(Some(l));
        }
        labels.insert(h, out);
    }
    let mut bundle = DatasetBundle::from_snapshots(
        snapshots,
        BundleSource::Fi2010 {
            file: path.display().to_string(),
        },
    )?;
    bundle.extra_features = Some(FeatureMatrix::new(EXTRA_ROWS, extra)?);
    bundle.provided_labels = Some(labels);
    bundle.check_shape()?;
    bundle.enforce(strict)?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write as _;

    fn matrix(rows: usize, cols: usize, label: f64) -> String {
        let mut s = String::new();
        for r in 0..rows {
            let vals: Vec<String> = (0..cols)
                .map(|c| {
                    let v = if r < 40 {
                        let level = (r / 4) as f64;
                        match r % 4 {
                            0 => 10.0 + 0.01 * level + 0.001 * c as f64,
                            2 => 9.99 - 0.01 * level + 0.001 * c as f64,
                            _ => 100.0 + level,
                        }
                    } else if r < 144 {
                        (r * cols + c) as f64
                    } else {
                        label
                    };
                    format!("{v:e}")
                })
                .collect();
            writeln!(s, "  {}", vals.join("  ")).unwrap();
        }
        s
    }

    fn parse(text: &str) -> Result<DatasetBundle> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fi.txt");
        std::fs::write(&p, text).unwrap();
        parse_fi2010_matrix(&p, true)
    }

    #[test]
    fn five_columns() {
        let b = parse(&matrix(149, 5, 2.0)).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b.levels(), 10);
        assert_eq!(b.extra_features.as_ref().unwrap().cols, 104);
        assert_eq!(b.extra_features.as_ref().unwrap().row(1)[0], (40 * 5 + 1) as f64);
        let labels = b.provided_labels.as_ref().unwrap();
        assert_eq!(labels.keys().copied().collect::<Vec<_>>(), FI2010_HORIZONS.to_vec());
        assert_eq!(labels[&10][0], Some(TrendLabel::Stable));
    }

    #[test]
    fn label_mapping() {
        assert_eq!(label_from_code(1.0), Some(TrendLabel::Up));
        assert_eq!(label_from_code(2.0), Some(TrendLabel::Stable));
        assert_eq!(label_from_code(3.0), Some(TrendLabel::Down));
        assert!(parse(&matrix(149, 2, 4.0)).unwrap_err().to_string().contains("outside"));
    }

    #[test]
    fn wrong_row_count() {
        let err = parse(&matrix(148, 3, 1.0)).unwrap_err();
        assert!(err.to_string().contains("expected 149"), "{err}");
    }
}
