//! Forward modelling, synthetic data generation and neural-network
//! inversion of LWD resistivity measurements.

pub mod dataset;
pub mod em;
pub mod formation;
pub mod instrument;
pub mod nn;
pub mod pipeline;
