//! Experiment orchestration: configuration, the offline and online
//! pipeline, method comparison, timing and metrics files.

pub mod compare;
pub mod config;
pub mod metrics;
pub mod pipeline;

pub use compare::{FullModel, Trained, compare_methods, measure_evolution, run_full_ensf, timing_table};
pub use config::{ExperimentConfig, Method, OUT_ROOT_ENV, Preset};
pub use metrics::{MetricsRecord, SummaryRow, TimingRecord, TimingTable, emit_metrics, emit_timing, parse_metrics, read_metrics, relative_rmse, summarize};
pub use pipeline::{Phase, PipelineReport, RunDir, run_pipeline};
