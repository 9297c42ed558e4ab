//! Threshold-free evaluation and cross-validation.

mod auc;
mod cv;
mod report;

pub use auc::{auc_pr, auc_roc, ScoredSet};
pub use cv::{cross_validate, score_set, CvResult, Dispersion, FoldMetrics};
pub use report::{EvalReport, EvalRow};
