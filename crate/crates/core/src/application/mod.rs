//! Aggregated rate data: ingest, outcome preparation, trimming, weighted
//! fits, relative-rate curves and block bootstrap bands.

mod fixture;
mod pipeline;
mod records;

pub use fixture::{generate_fixture, ExposureLayout, FixtureOptions, FixtureShape};
pub use pipeline::{
    application_grid, design_weights, fit_application, m_of_n_block_bootstrap, m_of_n_size, prepare_outcome,
    relative_rate_curve, resample_blocks, trim_bounds, trim_exposure, AppBalance, AppConfig, AppFit, BlockYear,
    BootstrapResult, ModelTable, MIN_BOOTSTRAP_BLOCKS,
};
pub use records::{ingest, AggregatedRecord, RecordSet, COVARIATE_PREFIX, REQUIRED_COLUMNS};
