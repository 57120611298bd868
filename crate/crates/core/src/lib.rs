pub mod estimators;
pub mod harness;
pub mod inference;
pub mod ingest;
pub mod params;
pub mod simulator;
pub mod spectral;
