//! Bundled variance components from Indian nation-wide maize variety trials
//! (extra-early maturity group, five agro-ecological sub-regions).
//!
//! The genotype-within-zone covariance is `σ²D = V + 31·𝟙𝟙ᵀ + 18·𝕀` where
//! `V` is either the first-order factor-analytic or the compound-symmetry
//! estimate. Genotype-by-location interaction and error variance together
//! total 493, so `σ²(v₂ + 1) = 493` and `v₂ = 493/σ² − 1`.

use nalgebra::DMatrix;

use crate::error::{DesignError, Result};
use crate::model::{
    CovarianceStructure, GenotypeCovariance, ModelSetup, ProblemDims, SubRegionLoads,
    VarianceComponents,
};

pub const SUBREGIONS: usize = 5;

#[rustfmt::skip]
pub const FA_V: [[f64; 5]; 5] = [
    [567.0, 254.0, 239.0, 485.0, 328.0],
    [254.0, 155.0, 118.0, 240.0, 162.0],
    [239.0, 118.0, 155.0, 226.0, 153.0],
    [485.0, 240.0, 226.0, 488.0, 310.0],
    [328.0, 162.0, 153.0, 310.0, 215.0],
];

pub const CS_V_DIAGONAL: f64 = 308.0;
pub const CS_V_OFF_DIAGONAL: f64 = 270.0;

/// Common genotype-by-maturity component added to every entry of `V`.
pub const COMMON_ADDITIVE: f64 = 31.0;
/// Genotype main-effect component added to the diagonal of `V`.
pub const DIAGONAL_ADDITIVE: f64 = 18.0;

pub const GENOTYPE_LOCATION: f64 = 160.0;
pub const OBSERVATION_ERROR: f64 = 333.0;
/// `σ²_γ + σ²`.
pub const GAMMA_PLUS_ERROR: f64 = GENOTYPE_LOCATION + OBSERVATION_ERROR;

pub const LOCATION: f64 = 1129.0;
pub const LOCATION_REPLICATE: f64 = 1000.0;
/// `σ²_λ + σ²_b`.
pub const LAMBDA_PLUS_REPLICATE: f64 = LOCATION + LOCATION_REPLICATE;

/// Sub-region areas from the digitized zone map.
pub const AREAS: [f64; 5] = [813685.0, 432716.0, 477365.0, 995298.0, 1174818.0];

pub const REPLICATES: usize = 2;
pub const DEFAULT_GENOTYPES: usize = 2;

/// Which genotype covariance of the maize data to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaizeStructure {
    FactorAnalytic,
    CompoundSymmetry,
    /// Compound symmetry without the diagonal genotype component
    /// (`V + 31·𝟙𝟙ᵀ`). The reference weighted-criterion designs for the
    /// compound-symmetry model are reproduced with this matrix.
    CompoundSymmetryPublished,
}

impl MaizeStructure {
    pub fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "maize-fa" => Some(MaizeStructure::FactorAnalytic),
            "maize-cs" => Some(MaizeStructure::CompoundSymmetry),
            "maize-cs-published" => Some(MaizeStructure::CompoundSymmetryPublished),
            _ => None,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            MaizeStructure::FactorAnalytic => "maize-fa",
            MaizeStructure::CompoundSymmetry => "maize-cs",
            MaizeStructure::CompoundSymmetryPublished => "maize-cs-published",
        }
    }

    pub fn covariance(self) -> Result<GenotypeCovariance> {
        match self {
            MaizeStructure::FactorAnalytic => maize_fa(),
            MaizeStructure::CompoundSymmetry => maize_cs(),
            MaizeStructure::CompoundSymmetryPublished => maize_cs_published(),
        }
    }
}

pub fn fa_matrix() -> DMatrix<f64> {
    DMatrix::from_fn(SUBREGIONS, SUBREGIONS, |i, j| FA_V[i][j])
}

pub fn cs_matrix() -> DMatrix<f64> {
    DMatrix::from_fn(SUBREGIONS, SUBREGIONS, |i, j| {
        if i == j {
            CS_V_DIAGONAL
        } else {
            CS_V_OFF_DIAGONAL
        }
    })
}

fn with_additive_terms(v: DMatrix<f64>, diagonal: f64) -> DMatrix<f64> {
    v.add_scalar(COMMON_ADDITIVE) + DMatrix::identity(SUBREGIONS, SUBREGIONS) * diagonal
}

/// `σ²D` under the factor-analytic model.
pub fn maize_fa() -> Result<GenotypeCovariance> {
    GenotypeCovariance::new(
        with_additive_terms(fa_matrix(), DIAGONAL_ADDITIVE),
        CovarianceStructure::FactorAnalytic,
    )
}

/// `σ²D` under the compound-symmetry model.
pub fn maize_cs() -> Result<GenotypeCovariance> {
    GenotypeCovariance::compound_symmetry(
        SUBREGIONS,
        CS_V_OFF_DIAGONAL + COMMON_ADDITIVE,
        CS_V_DIAGONAL - CS_V_OFF_DIAGONAL + DIAGONAL_ADDITIVE,
    )
}

pub fn maize_cs_published() -> Result<GenotypeCovariance> {
    GenotypeCovariance::compound_symmetry(
        SUBREGIONS,
        CS_V_OFF_DIAGONAL + COMMON_ADDITIVE,
        CS_V_DIAGONAL - CS_V_OFF_DIAGONAL,
    )
}

pub fn maize_areas() -> SubRegionLoads {
    SubRegionLoads::new(AREAS.to_vec()).expect("areas are positive")
}

/// Variance ratios implied by a chosen error variance. Requires
/// `σ² ≤ 493` so that `v₂ ≥ 0`.
pub fn maize_variance(sigma2: f64) -> Result<VarianceComponents> {
    if !(sigma2 > 0.0) {
        return Err(DesignError::invalid("sigma2", "must be positive"));
    }
    if sigma2 > GAMMA_PLUS_ERROR {
        return Err(DesignError::invalid(
            "sigma2",
            format!(
                "maize data needs sigma2 <= {GAMMA_PLUS_ERROR} (otherwise v2 < 0), got {sigma2}"
            ),
        ));
    }
    VarianceComponents::new(
        sigma2,
        LOCATION / sigma2,
        GAMMA_PLUS_ERROR / sigma2 - 1.0,
        LOCATION_REPLICATE / sigma2,
    )
}

pub fn maize_setup(structure: MaizeStructure, locations: usize, sigma2: f64) -> Result<ModelSetup> {
    Ok(ModelSetup {
        dims: ProblemDims::new(SUBREGIONS, DEFAULT_GENOTYPES, locations, REPLICATES)?,
        variance: maize_variance(sigma2)?,
        covariance: structure.covariance()?,
    })
}

pub fn maize_fa_scenario(locations: usize, sigma2: f64) -> Result<ModelSetup> {
    maize_setup(MaizeStructure::FactorAnalytic, locations, sigma2)
}

pub fn maize_cs_scenario(locations: usize, sigma2: f64) -> Result<ModelSetup> {
    maize_setup(MaizeStructure::CompoundSymmetry, locations, sigma2)
}
