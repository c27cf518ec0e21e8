//! Scenario ingestion, closed-loop episode execution, Monte-Carlo
//! aggregation, baselines and CSV export.

pub mod baseline;
pub mod csv;
pub mod episode;
pub mod metrics;
pub mod scenario;

pub use baseline::{run_baseline, BaselineKind, BaselineRun};
pub use csv::{export_metrics, export_trace, metrics_to_csv, trace_to_csv};
pub use episode::{run_episode, EpisodeOptions, EpisodeTrace, TickRecord};
pub use metrics::{monte_carlo, monte_carlo_baseline, Metrics};
pub use scenario::{load_scenario, scenario_from_json, HarnessError, Scenario};
