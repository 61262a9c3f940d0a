//! Repeated user-grouped cross-validation with per-fold ROC thresholds.

mod cv;
mod folds;
mod metrics;
mod report;

pub use cv::{balance_training_set, derive_seed, run_cv, CvConfig, FoldEntry};
pub use folds::{make_folds, split_validation, user_item_counts, FoldPlan};
pub use metrics::{auc_pairwise, compute_metrics, nan_as_null, select_threshold, task_votes, vote_metrics, Metrics};
pub use report::{aggregate, emit_report, mean_sd, Aggregate, EvalReport, ReportFormat, Summary};

use crate::model::{ModelError, Variant};
use crate::preprocess::PreprocessError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {need} users, have {have}")]
    TooFewUsers { have: usize, need: usize },
    #[error("both classes are required")]
    OneClassOnly,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("run {run}, fold {fold}, {variant}: {source}")]
    Fold {
        run: usize,
        fold: usize,
        variant: Variant,
        #[source]
        source: Box<EvalError>,
    },
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
