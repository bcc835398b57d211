//! Subject-centric evaluation: aggregation, splits, non-member pools,
//! calibrated thresholds, metrics and reports.

mod metrics;
mod pipeline;
mod report;
mod split;


pub use metrics::{
    aggregate, auc, calibrate_threshold, evaluate_at_threshold, AggregationKind, AggregationPolicy,
    CalibrationResult, MetricsTriple, ThresholdMetrics,
};
pub use pipeline::{run_audit, sample_window_indices, select_members, AuditOutput, ScoreDump, TrainedModel};
pub use report::{render_auc_scatter, render_delta_heatmap, AuditReport, DeltaAuc, ReportCell, CELLS_CSV_HEADER};
pub use split::{build_nonmember_pool, largest_remainder, split_subjects, LabeledSubject, SubjectSplit, SPLIT_NAMES};
