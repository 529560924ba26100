//! Streaming curation-pipeline model: per-stage worker throughputs, an
//! optimal worker allocator under a resource budget, and a deterministic
//! discrete-event simulation that validates the analytic throughput.

mod optimize;
mod pipeline;
mod sim;

pub use optimize::{
    min_cost_allocation, optimize_allocation, speedup_report, OptimizationResult, SpeedupReport,
    StageRow,
};
pub use pipeline::{example_pipeline, Allocation, BalancerError, PipelineSpec, StageSpec};
pub use sim::{simulate, SimReport};
