//! Run configuration and report output.

mod config;
mod report;

pub use config::{grid, parse_params, parse_range, parse_reals, Format, OutputConfig, RunConfig};
pub use report::{
    exit_code, write_classification_csv, write_json, write_sweep_csv, SweepCell, EXIT_BREAKDOWN, EXIT_CHECK_FAILED,
    EXIT_ERROR, EXIT_GLOBAL, EXIT_MARGINAL,
};
