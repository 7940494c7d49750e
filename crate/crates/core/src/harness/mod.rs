//! Config-driven experiments: single runs, the fixed-width vs adaptive sweep,
//! the `s0` grid search, and CSV output.

mod config;
mod csv_out;
mod experiment;

pub use config::{load_config, parse_config, DataSource, QuantConfig, TrainingConfig};
pub use csv_out::{emit_csv, read_csv, CsvRecorder, CsvRow, CSV_HEADER};
pub use experiment::{
    bits_to_threshold, build_plan, grid_search_s0, run_experiment, run_label, summarize, sweep,
    write_summary_csv, ExperimentRun, ExperimentSummary, GridReport, SweepReport, SWEEP_BITS,
    THRESHOLD_FACTOR,
};
