//! Benchmark control problems with their reference apparatus: boundary
//! control of a discrete heat equation with closed-form optimum, and a
//! phase-field prostate cancer model under cytotoxic therapy.

pub mod heat;
pub mod pca;

pub use heat::{heat_adapted_run, heat_errors, heat_run, HeatErrors, HeatExact, HeatProblem, HeatRun};
pub use pca::{pca_observables, PcaBenchmark, PcaConfig, PcaModel, PcaObservation, PcaParams, PcaProblem, PcaWeights, Protocol};
