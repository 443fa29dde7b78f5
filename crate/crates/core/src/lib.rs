//! Quantification of quantum correlations of two-beam Gaussian optical
//! fields from photon-counting statistics.
//!
//! The library turns joint photocount histograms into intensity-moment
//! tables (with optional EM deconvolution of the detector response and
//! bootstrap errors), evaluates purities, Renyi-2 entropy, Kullback-Leibler
//! divergence, Gaussian steering, logarithmic-negativity bounds and
//! principal squeezing from those moments, and validates every moment-based
//! formula against an independent covariance-matrix oracle.

pub mod em;
pub mod error;
pub mod gaussian;
pub mod moments;
pub mod pipeline;
pub mod quantifiers;
pub mod series;
pub mod statespace;
pub mod synth;

pub use error::{Error, Result};
pub use gaussian::{
    check_physical, covariance_of, forward_moments, from_purities, params_of_twin_beam,
    random_physical_state, CovMatrix, GaussianParams, SymplecticData, TwinBeamSpec,
};
pub use moments::{IntensityMoments, JointDistribution, JointHistogram};
pub use pipeline::{analyze, Analysis, AnalyzeOptions, DeconvolveOptions, ModeSetting};
pub use quantifiers::{full_report, QCReport, ReportOptions, Verdict};
pub use synth::{analytic_moments, simulate, DetectorSpec, SimRun};
