//! Delay-jitter toolkit for a single FCFS node with Poisson traffic.
//!
//! * [`model`]: closed-form jitter prediction, the loss/throughput identity
//!   and planning inversions.
//! * [`sim`]: seeded discrete-event FCFS simulator used as ground truth.
//! * [`metrics`]: IPDV, mean absolute jitter, windowed throughput, loss and
//!   correlation estimators.
//! * [`trace`]: 1 Hz field-log format and synthetic mobility traces.
//! * [`report`]: validation and analysis reports built from the above.

pub mod metrics;
pub mod model;
pub mod report;
pub mod sim;
pub mod trace;

pub use metrics::{correlate, ipdv_series, loss_rate, mean_abs_jitter, windowed_throughput, DelaySeries, JitterEstimate, MetricsError, SeriesStats};
pub use model::{
    analytical_jitter, invert_capacity_for_jitter, invert_load_for_jitter, loss_from_throughput, model_sweep,
    offered_load, throughput_from_loss, FormulaVariant, JitterPrediction, LinkParams, LossThroughputRecord, ModelError,
};
pub use report::{analyze_log, run_validation, AnalysisReport, ReportError, ValidationReport, ValidationSettings};
pub use sim::{
    merge_summaries, simulate_run, simulate_summary, simulate_sweep, PacketRecord, RunSummary, SimConfig, SimError,
    SweepAxis,
};
pub use trace::{
    parse_log, rate_at_distance, speed_at, synth_mobility_trace, write_log, MobilityScenario, QosLogRow,
    RateDistanceMap, TraceError,
};
