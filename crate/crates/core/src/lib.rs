//! Spectral-entropy guided multivariate time series forecasting: patch
//! embeddings, per-variable temporal attention, signed-graph spatial
//! extraction and an entropy-weighted fuser, trained with a reverse-mode
//! autodiff tape.

pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod fuser;
pub mod model;
pub mod numeric;
pub mod params;
pub mod spatial;
pub mod spectral;
pub mod stats;
pub mod training;
pub mod window;

pub use error::{Result, SeedError};
pub use window::SeriesWindow;
