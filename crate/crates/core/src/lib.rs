//! Multi-granularity spatio-temporal accident-risk forecasting.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod hierarchy;
pub mod ingest;
pub mod model;
pub mod objective;
pub mod similarity;
pub mod storage;
pub mod train;
pub mod types;

pub use error::{Error, Result};
