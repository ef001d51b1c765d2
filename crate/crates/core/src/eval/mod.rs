//! Metrics, baselines and benchmarks.

mod baseline;
mod embedding;
mod fps;
mod loo;
mod metrics;
pub mod plot;
mod report;
mod scenario;

pub use baseline::{consensus_baseline, consensus_score, BaselineConfig, BaselineOutput, BaselineVerdict};
pub use embedding::{pair_distance_samples, pair_distances, PairDistances};
pub use fps::{fps_benchmark, FpsMeasurement, FPS_REPETITIONS, MIN_TIMED_FRAMES, MIN_WARMUP};
pub use loo::{benign_or, evaluate_guard, leave_one_out, without, HeldOutResult, LeaveOneOutReport};
pub use metrics::{
    ap_from_hits, average_precision, average_precision_pooled, classification_metrics, confusion_counts,
    ClassificationMetrics, ConfusionCounts, DetectionSet, ScoredBox,
};
pub use report::{write_csv, Metric, MetricsReport, SliceMetrics, ABSENT};
pub use scenario::{eval_frames, evaluate_detection, receive, AttackScenario, Defense, DetectionEval, ReceivedFrame};
