//! Configuration, experiment orchestration and deterministic output for the
//! `krflow` command-line lab.

pub mod config;
pub mod experiments;
pub mod series;
pub mod snapshot;

pub use config::{parse_config, ConfigError, ExperimentConfig, ExperimentKind, Overrides};
pub use experiments::{run_experiment, CliError, Invariant, RunReport};
pub use series::{emit_series, fmt_g17, parse_series, read_series, MonitorSeries, SeriesMeta};
pub use snapshot::{read_snapshot, write_snapshot, Snapshot, SnapshotKind};

/// Size the global rayon pool from `KRFLOW_THREADS` (default 1, so that
/// reductions run in a fixed order).
pub fn init_threads() -> usize {
    let n = std::env::var("KRFLOW_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1);
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    n
}
