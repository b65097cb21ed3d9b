//! Optimal allocation of trial locations to sub-regions for multi-environment
//! crop variety testing.
//!
//! The crate works with the linear mixed model in which genotype effects are
//! nested within `P` sub-regions with covariance `σ²D`, and a design allocates
//! `J` locations across the sub-regions. It provides
//!
//! * closed-form MSE matrices of the BLUP for genotype effects and pairwise
//!   contrasts ([`model`]),
//! * the standard and weighted A-criteria with equivalence-theorem
//!   certificates ([`criteria`]),
//! * a simplex solver for approximate designs ([`optimizer`]),
//! * efficient rounding and exhaustive enumeration of exact designs ([`exact`]),
//! * designs with equal prediction variance across sub-regions ([`equal_efficiency`]),
//! * an independent Henderson / Monte Carlo oracle on the full model ([`oracle`]),
//! * the bundled maize dataset ([`dataset`]) and scenario runner ([`runner`]).

pub mod criteria;
pub mod dataset;
pub mod equal_efficiency;
pub mod error;
pub mod exact;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod oracle;
mod par;
pub mod runner;

pub use criteria::{criterion_value, optimality_condition, Criterion, DesignCertificate};
pub use error::{DesignError, Result};
pub use exact::{efficient_rounding, enumerate_optimal, EnumerationBudget, EnumerationResult};
pub use equal_efficiency::{
    exact_equal_efficiency, solve_equal_efficiency, EqualEfficiencyConfig,
    EqualEfficiencySolution,
};
pub use model::{
    adjusted_covariance, information_matrix, mse_contrasts, mse_genotype_effects,
    AdjustedCovariance, ApproximateDesign, CovarianceStructure, ExactDesign, GenotypeCovariance,
    ProblemDims, SubRegionLoads, VarianceComponents,
};
pub use optimizer::{optimize, proportional_design, OptimizedDesign, SolverConfig, StepRule};
