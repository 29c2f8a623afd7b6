//! Synthetic data generation, the four experiment drivers (coverage,
//! sandwich, scaling, shift), and their CSV reports.
//!
//! Replicates run in parallel with per-replicate random streams keyed
//! by `(seed, replicate, purpose)`; aggregation is a deterministic fold
//! over sorted replicate indices, so reports are byte-identical at any
//! thread count.

pub mod config;
pub mod coverage;
pub mod datagen;
pub mod report;
pub mod sandwich;
pub mod scaling;
pub mod shift;

pub use config::ExperimentConfig;
pub use coverage::{
    coverage_csv, coverage_summary_csv, run_coverage, CoverageAgg, CoverageOutcome, CoverageRow,
};
pub use datagen::generate_dataset;
pub use sandwich::{run_sandwich, sandwich_csv, sandwich_summary_csv, SandwichOutcome};
pub use scaling::{
    run_scaling, scaling_csv, scaling_fit_csv, scaling_rows_csv, ScalingOutcome,
};
pub use shift::{run_shift, shift_csv, shift_summary_csv, ShiftOutcome};
