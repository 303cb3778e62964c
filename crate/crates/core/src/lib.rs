//! Spatial causal tensor completion.
//!
//! Potential outcomes for `N` spatial units, `L = 2^K` factorial exposure
//! levels and `O` outcomes are arranged in an `N × L × O` tensor of which
//! only one level slice per unit is observed. The crate completes that
//! tensor with a low-rank Tucker model whose unit factor is expressed
//! through measured covariates plus a stepwise-selected set of graph
//! Laplacian eigenvectors (absorbing smooth unmeasured confounding), then
//! reports outcome-imputation and augmented IPW effect estimates.
//!
//! Module map:
//!
//! * [`tensor`]: dense tensors, unfoldings, mode products, HOSVD.
//! * [`spatial`]: kNN / lattice graphs, normalized Laplacian, eigenbasis.
//! * [`propensity`]: factorial level coding, multinomial logit, IPW weights.
//! * [`spgd`]: the block-coordinate spatial Tucker solver, eigenvector
//!   selection, rank cross-validation and cross-fitting.
//! * [`estimator`]: the three-step pipeline and effect estimators.
//! * [`simgen`]: synthetic scenarios with known truth, baselines, benchmarks.

pub mod error;
pub mod estimator;
pub mod linalg;
pub mod propensity;
pub mod simgen;
pub mod spatial;
pub mod spgd;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use estimator::{EffectEstimate, PipelineConfig, PipelineResult, Transform, TransformRecord};
pub use propensity::{ExposureDesign, PropensityModel};
pub use simgen::{ScenarioConfig, SyntheticDataset};
pub use spatial::{SpatialGraph, SpectralBasis};
pub use spgd::{FitConfig, SpatialTuckerModel};
pub use tensor::{Dims, Mode, Ranks, Tensor3, TuckerFactors};

pub use nalgebra::{DMatrix, DVector};
