//! Sparse frequency-domain channel sounding.
//!
//! The crate builds probe-frequency grids (uniform, coprime, nested and
//! parabolic), synthesizes multipath channel responses with molecular
//! absorption, analyses the delay likelihood of a grid and extracts
//! multipath components with SAGE and its likelihood-rectified variant.

pub mod absorption;
pub mod analysis;
pub mod benchmark;
pub mod channel;
pub mod error;
pub mod estimator;
pub mod grid;
pub mod likelihood;

pub use absorption::AbsorptionModel;
pub use channel::{AntennaPattern, MeasurementSet, PathParams, Pointing, SoundingModel};
pub use error::{Error, Result};
pub use estimator::{EstimateSet, SageConfig};
pub use grid::{FrequencyGrid, PredictedUdr, Scheme};
