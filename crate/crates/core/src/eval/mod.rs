//! Metrics, the benchmark data pipeline and the benchmark runner.

mod bench;
mod detect;
mod metrics;
mod pipeline;
mod report;

pub use bench::{run_benchmark, BenchDataset, CellResult, MethodAggregate, MetricsReport};
pub use detect::detect;
pub use metrics::{auc_roc, auc_roc_counts, f1_score, rank_methods, Ranking};
pub use pipeline::{
    adbench_pipeline, adjust_size, split_indices, Scenario, ScenarioKind, CLEAN_RATE_CUTOFF, MAX_ROWS, MIN_ROWS,
};
pub use report::{render_svg, write_report};
