//! Limit order book data types, ingestion, sampling, labeling, feature
//! assembly and evaluation metrics.

mod error;
pub mod evaluation;
pub mod features;
pub mod ingest;
pub mod labeling;
pub mod lob;
pub mod sampling;

pub use error::{Error, Result};
pub use ingest::{DatasetBundle, SplitSpec};
pub use lob::{LobRecord, MidPriceSeries, OrderEvent, TrendLabel};
