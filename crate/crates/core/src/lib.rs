//! Video anomaly detection with future-frame prediction, a memory-augmented
//! generator and a normalcy classifier trained against synthesized pseudo
//! anomalies.

pub mod augment;
pub mod cli;
pub mod config;
pub mod error;
pub mod ingest;
pub mod losses;
pub mod networks;
pub mod raster;
pub mod relevancy;
pub mod scoring;
pub mod training;
pub mod synthesis;
pub mod toybench;

pub use error::{Error, Result};
