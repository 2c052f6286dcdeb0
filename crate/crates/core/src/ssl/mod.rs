//! Curriculum pseudo-labeling with consistency-regularized warm-up.

pub mod curriculum;
pub mod pipeline;
pub mod thresholds;

pub use curriculum::{select_confident, CurriculumConfig, CurriculumState, IterationLog};
pub use pipeline::{
    calibrate_thresholds, curriculum_finetune, run_baseline, run_crupl, warmup_train, BaselineOutcome, CruplConfig,
    CruplOutcome, CurriculumReport, SslConfig, WarmupReport,
};
pub use thresholds::{assign_pseudo_labels, percentile, thresholds_from, PseudoLabelResult, ThresholdVector};
