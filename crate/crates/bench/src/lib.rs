pub mod analysis;
pub mod config;
pub mod experiment;
pub mod log;
pub mod metrics;
pub mod train;
