use std::path::Path;

use crate::error::{Error, Result};
use crate::lob::{Direction, EventKind, LobRecord, OrderEvent};

use super::{BundleSource, DatasetBundle};

/// Integer prices in snapshot/message files are ten-thousandths of a unit.
pub const PRICE_SCALE: f64 = 1e-4;

/// Division rather than multiplication by [`PRICE_SCALE`] keeps decimal
/// prices exact (`1012300 / 1e4 == 101.23`).
fn from_ticks(v: f64) -> f64 {
    v / 10_000.0
}

fn read_rows(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        out.push((i + 1, rec?));
    }
    Ok(out)
}

pub(crate) fn field_f64(path: &Path, line: usize, col: usize, s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line,
        message: format!("column {}: non-numeric field {s:?}", col + 1),
    })
}

fn field_i64(path: &Path, line: usize, col: usize, s: &str) -> Result<i64> {
    let v = field_f64(path, line, col, s)?;
    if v.fract() != 0.0 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line,
            message: format!("column {}: expected an integer, got {s:?}", col + 1),
        });
    }
    Ok(v as i64)
}

fn parse_event(path: &Path, line: usize, rec: &csv::StringRecord) -> Result<OrderEvent> {
    let bad = |message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    if rec.len() < 6 {
        return Err(bad(format!("expected 6 message columns, got {}", rec.len())));
    }
    let code = field_i64(path, line, 1, &rec[1])?;
    let kind = EventKind::from_code(code).ok_or_else(|| bad(format!("unknown event type {code}")))?;
    let order_id = field_i64(path, line, 2, &rec[2])?;
    let sign = field_i64(path, line, 5, &rec[5])?;
    let direction = Direction::from_sign(sign).ok_or_else(|| bad(format!("direction must be 1 or -1, got {sign}")))?;
    Ok(OrderEvent {
        timestamp: field_f64(path, line, 0, &rec[0])?,
        kind,
        order_id: u64::try_from(order_id).map_err(|_| bad(format!("negative order id {order_id}")))?,
        size: field_f64(path, line, 3, &rec[3])?,
        price: from_ticks(field_f64(path, line, 4, &rec[4])?),
        direction,
    })
}

/// Parses an order-book file and its row-aligned message file.
///
/// Book rows hold `4 * levels` integer columns (ask price, ask size, bid
/// price, bid size per level); message rows are
/// `time,type,order_id,size,price,direction`. Snapshot timestamps come from
/// the message file.
pub fn parse_snapshot_message_pair(orderbook: &Path, message: &Path, levels: usize, strict: bool) -> Result<DatasetBundle> {
    if levels == 0 {
        return Err(Error::InvalidParameter("levels must be at least 1".into()));
    }
    let book = read_rows(orderbook)?;
    let msgs = read_rows(message)?;
    if book.len() != msgs.len() {
        return Err(Error::RowCountMismatch {
            left: orderbook.display().to_string(),
            left_rows: book.len(),
            right: message.display().to_string(),
            right_rows: msgs.len(),
        });
    }
    let mut snapshots = Vec::with_capacity(book.len());
    let mut events = Vec::with_capacity(book.len());
    for ((line, brow), (mline, mrow)) in book.iter().zip(&msgs) {
        let ev = parse_event(message, *mline, mrow)?;
        if brow.len() < 4 * levels {
            return Err(Error::Parse {
                path: orderbook.display().to_string(),
                line: *line,
                message: format!("expected {} columns for {levels} levels, got {}", 4 * levels, brow.len()),
            });
        }
        let mut row = Vec::with_capacity(4 * levels);
        for (c, s) in brow.iter().take(4 * levels).enumerate() {
            let v = field_f64(orderbook, *line, c, s)?;
            row.push(if c % 2 == 0 { from_ticks(v) } else { v });
        }
        snapshots.push(LobRecord::from_interleaved(ev.timestamp, &row)?);
        events.push(ev);
    }
    let mut bundle = DatasetBundle::from_snapshots(
        snapshots,
        BundleSource::SnapshotMessagePair {
            orderbook: orderbook.display().to_string(),
            message: message.display().to_string(),
        },
    )?;
    bundle.events = Some(events);
    bundle.enforce(strict)?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn pair(book: &str, msg: &str) -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let b = dir.path().join("book.csv");
        let m = dir.path().join("msg.csv");
        fs::write(&b, book).unwrap();
        fs::write(&m, msg).unwrap();
        (dir, b, m)
    }

    #[test]
    fn one_level_row() {
        let (_d, b, m) = pair("1012300,100,1011100,80\n", "34200.5,4,17,200,1012300,-1\n");
        let bundle = parse_snapshot_message_pair(&b, &m, 1, true).unwrap();
        let r = &bundle.snapshots[0];
        assert_eq!(r.ask_prices, vec![101.23]);
        assert_eq!(r.ask_volumes, vec![100.0]);
        assert_eq!(r.bid_prices, vec![101.11]);
        assert_eq!(r.bid_volumes, vec![80.0]);
        assert_eq!(r.timestamp, 34200.5);
        let e = &bundle.events.as_ref().unwrap()[0];
        assert_eq!(e.kind, EventKind::ExecutionVisible);
        assert_eq!(e.size, 200.0);
        assert_eq!(e.price, 101.23);
        assert_eq!(e.direction, Direction::Sell);
        assert_eq!(e.order_id, 17);
    }

    #[test]
    fn row_count_mismatch() {
        let book = "1012300,100,1011100,80\n".repeat(3);
        let msg = "34200.5,1,17,200,1012300,1\n".repeat(4);
        let (_d, b, m) = pair(&book, &msg);
        let err = parse_snapshot_message_pair(&b, &m, 1, false).unwrap_err();
        assert!(matches!(err, Error::RowCountMismatch { left_rows: 3, right_rows: 4, .. }), "{err}");
    }

    #[test]
    fn non_numeric_field() {
        let (_d, b, m) = pair("1012300,abc,1011100,80\n", "34200.5,1,17,200,1012300,1\n");
        let err = parse_snapshot_message_pair(&b, &m, 1, false).unwrap_err();
        assert!(err.to_string().contains("abc"), "{err}");
    }

    #[test]
    fn crossed_book_fatal_only_when_strict() {
        let (_d, b, m) = pair("1011100,100,1012300,80\n", "34200.5,1,17,200,1012300,1\n");
        assert!(parse_snapshot_message_pair(&b, &m, 1, false).is_ok());
        let err = parse_snapshot_message_pair(&b, &m, 1, true).unwrap_err();
        assert!(err.to_string().contains("crossed book"), "{err}");
    }
}
