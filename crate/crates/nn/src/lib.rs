//! Trend-classification models for limit order book windows.

mod error;
pub mod bench;
pub mod check;
pub mod layers;
pub mod model;
pub mod sweep;
pub mod train;

pub use error::{NnError, Result};
