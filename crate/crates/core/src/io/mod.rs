//! File formats: network JSON, bid and baseline CSV, run configuration TOML,
//! and the artifact writers (trajectory/schedule/price/ratio tables, run
//! manifest, solver log).
//!
//! Readers convert everything to the dimensionless internal units on entry;
//! writers convert back to SI on exit unless asked for the raw series.

pub mod config;
pub mod input;
pub mod output;

pub use config::{read_config, RunConfig};
pub use input::{read_baseline, read_bids, read_network};
pub use output::{
    price_rows, ratio_rows, read_manifest, schedule_rows, write_manifest, write_prices_csv,
    write_ratios_csv, write_schedule_csv, write_solver_log, InputDigest, PriceRow, RatioRow,
    ReplaySummary, RunManifest, ScheduleRow, TrajectoryTable,
};
