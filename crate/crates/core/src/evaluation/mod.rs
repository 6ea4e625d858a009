//! Benchmark metrics, calibration curves, and class-imbalance resampling.

mod auc;
mod calibration;
mod metrics;
mod resample;

pub use auc::{auc_pairwise_oracle, roc_auc};
pub use calibration::{calibration_curve, CalibrationBin, CalibrationCurve};
pub use metrics::{confusion_at_threshold, evaluate, precision_recall_f1, ConfusionCounts, MetricsRow, DEFAULT_THRESHOLD};
pub use resample::{downsample_majority, Resample};
