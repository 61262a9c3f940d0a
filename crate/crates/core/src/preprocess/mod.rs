//! From task records to model-ready items: windowing, cyclic splitting,
//! normalization, class balancing and scan-path rasterization.

mod balance;
mod features;
mod items;
mod raster;
mod window;

pub use balance::{downsample_majority, smote, SmoteSample};
pub use features::{
    compute_stats, feature_rows, normalize, FeatureSequence, FeatureStats, FEATURE_NAMES, N_FEATURES,
    ZSCORE_COLUMNS,
};
pub use items::{build_items, task_items, write_items_dir, BuiltItems, DataItem, DroppedTask};
pub use raster::{bresenham, grid_size, rasterize_scanpath, RasterConfig, ScanPathImage};
pub use window::{cyclic_split, extract_window, interleave};

use crate::data::DataError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("task `{0}` has no sample with a valid eye")]
    NoValidGaze(String),
    #[error("no unmasked rows to compute statistics from")]
    EmptyInput,
    #[error("SMOTE needs more than k={k} minority items, got {have}")]
    TooFewMinority { have: usize, k: usize },
    #[error("invalid preprocessing config: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = PreprocessError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub trim_ms: f64,
    pub window_s: f64,
    pub n_splits: usize,
    pub seq_len: usize,
    pub raster: RasterConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            trim_ms: crate::data::DEFAULT_TRIM_MS,
            window_s: 5.0,
            n_splits: 4,
            seq_len: 150,
            raster: RasterConfig::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_splits == 0 || self.seq_len == 0 || self.raster.downsize == 0 {
            return Err(PreprocessError::InvalidConfig(
                "n_splits, seq_len and downsize must be at least 1".into(),
            ));
        }
        if !(self.window_s > 0.0) || !(self.trim_ms >= 0.0) {
            return Err(PreprocessError::InvalidConfig(
                "window must be positive and trim nonnegative".into(),
            ));
        }
        Ok(())
    }
}
