//! Domain types and the closed-form MSE algebra of the BLUP.
//!
//! With `B(ξ) = (M(ξ) + Δ⁻¹)⁻¹` the MSE matrix for a pairwise contrast of
//! genotypes is `2σ²(rv₂+1)/(rJ) · B(ξ)`, and the MSE matrix for the full
//! vector of genotype effects is
//! `σ²[(1/K)𝟙𝟙ᵀ ⊗ D + (𝕀 − (1/K)𝟙𝟙ᵀ) ⊗ (rJ/(rv₂+1) M(ξ) + D⁻¹)⁻¹]`.
//!
//! The replicate count `r` generalizes the two replicates per location of
//! the underlying trial model; `r = 2` is the default.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};
use crate::linalg;

/// Weights summing to one within this tolerance form a valid design.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemDims {
    /// Number of sub-regions `P`.
    pub subregions: usize,
    /// Number of genotypes `K`.
    pub genotypes: usize,
    /// Total number of locations `J`.
    pub locations: usize,
    /// Replicates per genotype and location.
    pub replicates: usize,
}

impl ProblemDims {
    pub fn new(subregions: usize, genotypes: usize, locations: usize, replicates: usize) -> Result<Self> {
        if subregions < 1 {
            return Err(DesignError::invalid("subregions", "must be at least 1"));
        }
        if genotypes < 2 {
            return Err(DesignError::invalid("genotypes", "must be at least 2"));
        }
        if locations < 1 {
            return Err(DesignError::invalid("locations", "must be at least 1"));
        }
        if replicates < 1 {
            return Err(DesignError::invalid("replicates", "must be at least 1"));
        }
        Ok(ProblemDims {
            subregions,
            genotypes,
            locations,
            replicates,
        })
    }

    pub fn with_locations(self, locations: usize) -> Result<Self> {
        ProblemDims::new(self.subregions, self.genotypes, locations, self.replicates)
    }

    pub fn with_genotypes(self, genotypes: usize) -> Result<Self> {
        ProblemDims::new(self.subregions, genotypes, self.locations, self.replicates)
    }
}

/// Error variance and the variance ratios of the location, genotype-location
/// and replicate effects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma2: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
}

impl VarianceComponents {
    pub fn new(sigma2: f64, v1: f64, v2: f64, v3: f64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(DesignError::invalid("sigma2", format!("must be positive, got {sigma2}")));
        }
        for (name, v) in [("v1", v1), ("v2", v2), ("v3", v3)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DesignError::invalid(name, format!("must be non-negative, got {v}")));
            }
        }
        Ok(VarianceComponents { sigma2, v1, v2, v3 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CovarianceStructure {
    /// `σ²D = a·𝟙𝟙ᵀ + b·𝕀`, parameters in data units.
    CompoundSymmetry { a: f64, b: f64 },
    FactorAnalytic,
    General,
}

/// The covariance `σ²D` of the genotype effects within sub-regions.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeCovariance {
    sigma2_d: DMatrix<f64>,
    structure: CovarianceStructure,
}

impl GenotypeCovariance {
    pub fn new(sigma2_d: DMatrix<f64>, structure: CovarianceStructure) -> Result<Self> {
        linalg::validate_spd(&sigma2_d, "genotype covariance")?;
        if let CovarianceStructure::CompoundSymmetry { a, b } = structure {
            let p = sigma2_d.nrows();
            let expect = compound_symmetry_matrix(p, a, b);
            if (&expect - &sigma2_d).amax() > 1e-12 * sigma2_d.amax() {
                return Err(DesignError::invalid(
                    "genotype covariance",
                    "matrix does not match its compound-symmetry parameters",
                ));
            }
        }
        Ok(GenotypeCovariance { sigma2_d, structure })
    }

    pub fn compound_symmetry(p: usize, a: f64, b: f64) -> Result<Self> {
        if p == 0 {
            return Err(DesignError::invalid("subregions", "must be at least 1"));
        }
        if !(b > 0.0) || !(a + b / p as f64 > 0.0) {
            return Err(DesignError::invalid(
                "compound symmetry",
                format!("need b > 0 and a + b/P > 0, got a={a}, b={b}"),
            ));
        }
        GenotypeCovariance::new(
            compound_symmetry_matrix(p, a, b),
            CovarianceStructure::CompoundSymmetry { a, b },
        )
    }

    pub fn general(sigma2_d: DMatrix<f64>) -> Result<Self> {
        GenotypeCovariance::new(sigma2_d, CovarianceStructure::General)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma2_d
    }

    pub fn structure(&self) -> CovarianceStructure {
        self.structure
    }

    pub fn subregions(&self) -> usize {
        self.sigma2_d.nrows()
    }

    /// `D = σ²D / σ²`.
    pub fn scaled(&self, sigma2: f64) -> DMatrix<f64> {
        &self.sigma2_d / sigma2
    }

    /// Same covariance with all off-diagonal entries removed.
    pub fn diagonal_part(&self) -> Result<Self> {
        let d = DMatrix::from_diagonal(&self.sigma2_d.diagonal());
        GenotypeCovariance::new(d, CovarianceStructure::General)
    }
}

fn compound_symmetry_matrix(p: usize, a: f64, b: f64) -> DMatrix<f64> {
    DMatrix::from_element(p, p, a) + DMatrix::identity(p, p) * b
}

/// A probability vector over the sub-regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ApproximateDesign {
    weights: Vec<f64>,
}

impl ApproximateDesign {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(DesignError::invalid("weights", "design needs at least one sub-region"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DesignError::invalid("weights", "weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(DesignError::invalid(
                "weights",
                format!("weights must sum to 1, got {total}"),
            ));
        }
        Ok(ApproximateDesign { weights })
    }

    /// Rescales non-negative weights onto the simplex.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DesignError::invalid("weights", "weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(DesignError::invalid("weights", "weights sum to zero"));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        ApproximateDesign::new(weights)
    }

    pub fn balanced(p: usize) -> Self {
        ApproximateDesign {
            weights: vec![1.0 / p as f64; p],
        }
    }

    pub fn from_exact(exact: &ExactDesign) -> Result<Self> {
        let total = exact.total();
        if total == 0 {
            return Err(DesignError::invalid("counts", "exact design has no locations"));
        }
        let t = total as f64;
        Ok(ApproximateDesign {
            weights: exact.counts().iter().map(|&c| c as f64 / t).collect(),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Indices of sub-regions with weight above `tol`.
    pub fn support(&self, tol: f64) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > tol)
            .map(|(i, _)| i)
            .collect()
    }
}

impl TryFrom<Vec<f64>> for ApproximateDesign {
    type Error = DesignError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ApproximateDesign::new(v)
    }
}

impl From<ApproximateDesign> for Vec<f64> {
    fn from(d: ApproximateDesign) -> Self {
        d.weights
    }
}

/// Integer location counts per sub-region.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExactDesign {
    counts: Vec<usize>,
}

impl ExactDesign {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(DesignError::invalid("counts", "design needs at least one sub-region"));
        }
        if counts.iter().sum::<usize>() == 0 {
            return Err(DesignError::invalid("counts", "design has no locations"));
        }
        Ok(ExactDesign { counts })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// `Δ = rJ/(rv₂+1) · D` together with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedCovariance {
    delta: DMatrix<f64>,
    delta_inv: DMatrix<f64>,
}

impl AdjustedCovariance {
    /// Wraps a positive definite matrix as Δ.
    pub fn from_matrix(delta: DMatrix<f64>) -> Result<Self> {
        linalg::validate_spd(&delta, "adjusted covariance")?;
        let delta_inv = linalg::spd_inverse(&delta)?;
        Ok(AdjustedCovariance { delta, delta_inv })
    }

    pub fn delta(&self) -> &DMatrix<f64> {
        &self.delta
    }

    pub fn delta_inv(&self) -> &DMatrix<f64> {
        &self.delta_inv
    }

    pub fn subregions(&self) -> usize {
        self.delta.nrows()
    }

    /// `M(ξ) + Δ⁻¹`.
    pub fn precision(&self, design: &ApproximateDesign) -> DMatrix<f64> {
        let mut m = self.delta_inv.clone();
        for (i, w) in design.weights().iter().enumerate() {
            m[(i, i)] += w;
        }
        m
    }

    /// `(M(ξ) + Δ⁻¹)⁻¹`.
    pub fn posterior(&self, design: &ApproximateDesign) -> Result<DMatrix<f64>> {
        self.check_dims(design)?;
        linalg::spd_inverse_checked(&self.precision(design))
    }

    pub(crate) fn check_dims(&self, design: &ApproximateDesign) -> Result<()> {
        if design.len() != self.subregions() {
            return Err(DesignError::invalid(
                "weights",
                format!("design has {} sub-regions, Δ has {}", design.len(), self.subregions()),
            ));
        }
        Ok(())
    }
}

/// Non-negative coefficients attached to the sub-regions, e.g. their areas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SubRegionLoads(Vec<f64>);

impl SubRegionLoads {
    pub fn new(loads: Vec<f64>) -> Result<Self> {
        if loads.is_empty() {
            return Err(DesignError::invalid("loads", "need at least one coefficient"));
        }
        if loads.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(DesignError::invalid("loads", "coefficients must be positive"));
        }
        Ok(SubRegionLoads(loads))
    }

    pub fn uniform(p: usize, value: f64) -> Result<Self> {
        SubRegionLoads::new(vec![value; p])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for SubRegionLoads {
    type Error = DesignError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        SubRegionLoads::new(v)
    }
}

impl From<SubRegionLoads> for Vec<f64> {
    fn from(l: SubRegionLoads) -> Self {
        l.0
    }
}

/// Everything needed to build Δ for one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSetup {
    pub dims: ProblemDims,
    pub variance: VarianceComponents,
    pub covariance: GenotypeCovariance,
}

impl ModelSetup {
    pub fn adjusted(&self) -> Result<AdjustedCovariance> {
        adjusted_covariance(&self.covariance, &self.variance, &self.dims)
    }
}

/// `M(ξ) = diag(w₁, …, w_P)`.
pub fn information_matrix(design: &ApproximateDesign) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(design.weights()))
}

/// `F = block-diag(𝟙_{rJ₁}, …, 𝟙_{rJ_P})`: maps the observations of one
/// genotype to their sub-region. Sub-regions without locations give a zero
/// column.
pub fn design_block_matrix(exact: &ExactDesign, replicates: usize) -> DMatrix<f64> {
    let rows = exact.total() * replicates;
    let p = exact.len();
    let mut f = DMatrix::zeros(rows, p);
    let mut row = 0;
    for (i, &c) in exact.counts().iter().enumerate() {
        for _ in 0..c * replicates {
            f[(row, i)] = 1.0;
            row += 1;
        }
    }
    f
}

/// `rJ/(rv₂+1)`, the factor turning `D` into `Δ`.
pub fn delta_scale(vc: &VarianceComponents, dims: &ProblemDims) -> f64 {
    let r = dims.replicates as f64;
    r * dims.locations as f64 / (r * vc.v2 + 1.0)
}

pub fn adjusted_covariance(
    gc: &GenotypeCovariance,
    vc: &VarianceComponents,
    dims: &ProblemDims,
) -> Result<AdjustedCovariance> {
    if gc.subregions() != dims.subregions {
        return Err(DesignError::invalid(
            "genotype covariance",
            format!("expected {0}x{0}, got {1}x{1}", dims.subregions, gc.subregions()),
        ));
    }
    let delta = gc.scaled(vc.sigma2) * delta_scale(vc, dims);
    AdjustedCovariance::from_matrix(delta)
}

/// MSE matrix of the BLUP of a pairwise genotype contrast.
pub fn mse_contrasts(
    design: &ApproximateDesign,
    adj: &AdjustedCovariance,
    vc: &VarianceComponents,
    dims: &ProblemDims,
) -> Result<DMatrix<f64>> {
    let posterior = adj.posterior(design)?;
    let factor = 2.0 * vc.sigma2 / delta_scale(vc, dims);
    Ok(posterior * factor)
}

/// MSE matrix of the BLUP of all `PK` genotype effects, ordered genotype-major.
pub fn mse_genotype_effects(
    design: &ApproximateDesign,
    adj: &AdjustedCovariance,
    gc: &GenotypeCovariance,
    vc: &VarianceComponents,
    dims: &ProblemDims,
) -> Result<DMatrix<f64>> {
    // (rJ/(rv₂+1) M + D⁻¹)⁻¹ = (M + Δ⁻¹)⁻¹ / scale
    let inner = adj.posterior(design)? / delta_scale(vc, dims);
    let d = gc.scaled(vc.sigma2);
    let k = dims.genotypes;
    let kf = k as f64;
    let mean = DMatrix::from_element(k, k, 1.0 / kf);
    let centering = DMatrix::identity(k, k) - &mean;
    let out = mean.kronecker(&d) + centering.kronecker(&inner);
    Ok(out * vc.sigma2)
}
