//! Full linear mixed model as an independent check on the closed forms.
//!
//! Observations are stacked genotype-major, then by location (grouped by
//! sub-region), then by replicate: row `k·rJ + j·r + l`. In this order the
//! model reads `Y = (𝟙_K ⊗ F)μ + (𝕀_K ⊗ F)α + ε̃` with
//! `Cov(α) = σ²𝕀_K ⊗ D` and
//! `Cov(ε̃) = σ²((v₁𝟙𝟙ᵀ + v₂𝕀)_K ⊗ 𝕀_J ⊗ 𝟙𝟙ᵀ_r + v₃𝟙𝟙ᵀ_K ⊗ 𝕀_{rJ} + 𝕀)`.
//!
//! The residual covariance is block diagonal over locations once rows are
//! grouped by location, which the structured Henderson path exploits. The
//! dense path factors the full matrix and serves as the baseline.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};
use crate::linalg;
use crate::model::{design_block_matrix, ExactDesign, GenotypeCovariance, ProblemDims, VarianceComponents};
use crate::par;

/// Largest observation count the assembly accepts.
pub const MAX_ROWS: usize = 200_000;
/// Largest observation count for which the dense `n×n` residual covariance
/// is formed.
pub const MAX_DENSE_ROWS: usize = 6_000;

const SIMULATION_CHUNK: usize = 500;

#[derive(Debug, Clone)]
pub struct ModelMatrices {
    pub counts: ExactDesign,
    pub genotypes: usize,
    pub replicates: usize,
    pub sigma2: f64,
    /// `F = block-diag(𝟙_{rJ₁}, …, 𝟙_{rJ_P})`.
    pub f: DMatrix<f64>,
    /// `X = 𝟙_K ⊗ F`.
    pub x: DMatrix<f64>,
    /// `Z = 𝕀_K ⊗ F`.
    pub z: DMatrix<f64>,
    /// `G = σ²𝕀_K ⊗ D`.
    pub g: DMatrix<f64>,
    /// Covariance of the `rK` residuals at one location, genotype-major.
    pub location_block: DMatrix<f64>,
    /// Sub-region of every location.
    pub location_region: Vec<usize>,
    variance: VarianceComponents,
}

impl ModelMatrices {
    pub fn rows(&self) -> usize {
        self.replicates * self.counts.total() * self.genotypes
    }

    pub fn subregions(&self) -> usize {
        self.counts.len()
    }

    pub fn locations(&self) -> usize {
        self.counts.total()
    }

    /// `H = 𝕀_J ⊗ 𝟙_r`.
    pub fn h(&self) -> DMatrix<f64> {
        DMatrix::identity(self.locations(), self.locations())
            .kronecker(&DMatrix::from_element(self.replicates, 1, 1.0))
    }

    fn row(&self, k: usize, j: usize, l: usize) -> usize {
        k * self.replicates * self.locations() + j * self.replicates + l
    }

    /// Dense residual covariance `R` assembled from its Kronecker form.
    pub fn residual_covariance(&self) -> Result<DMatrix<f64>> {
        let n = self.rows();
        if n > MAX_DENSE_ROWS {
            return Err(DesignError::invalid(
                "model size",
                format!("{n} rows is too many for a dense residual covariance (max {MAX_DENSE_ROWS})"),
            ));
        }
        let k = self.genotypes;
        let jn = self.locations();
        let r = self.replicates;
        let vc = &self.variance;
        let ones_k = DMatrix::from_element(k, k, 1.0);
        let ones_r = DMatrix::from_element(r, r, 1.0);
        let genotype_part = &ones_k * vc.v1 + DMatrix::identity(k, k) * vc.v2;
        let location = genotype_part
            .kronecker(&DMatrix::identity(jn, jn))
            .kronecker(&ones_r);
        let replicate = ones_k.kronecker(&DMatrix::identity(r * jn, r * jn)) * vc.v3;
        Ok((location + replicate + DMatrix::identity(n, n)) * self.sigma2)
    }
}

pub fn assemble(
    exact: &ExactDesign,
    vc: &VarianceComponents,
    gc: &GenotypeCovariance,
    dims: &ProblemDims,
) -> Result<ModelMatrices> {
    let p = exact.len();
    if p != dims.subregions || gc.subregions() != p {
        return Err(DesignError::invalid(
            "counts",
            format!("design has {p} sub-regions, model has {}", dims.subregions),
        ));
    }
    let k = dims.genotypes;
    let r = dims.replicates;
    let rows = r * exact.total() * k;
    if rows > MAX_ROWS {
        return Err(DesignError::invalid(
            "model size",
            format!("{rows} observations exceed the limit of {MAX_ROWS}"),
        ));
    }

    let f = design_block_matrix(exact, r);
    let ones = DMatrix::from_element(k, 1, 1.0);
    let x = ones.kronecker(&f);
    let z = DMatrix::identity(k, k).kronecker(&f);
    let g = DMatrix::identity(k, k).kronecker(&gc.matrix().clone());

    let ones_k = DMatrix::from_element(k, k, 1.0);
    let ones_r = DMatrix::from_element(r, r, 1.0);
    let location_block = ((&ones_k * vc.v1 + DMatrix::identity(k, k) * vc.v2).kronecker(&ones_r)
        + ones_k.kronecker(&DMatrix::identity(r, r)) * vc.v3
        + DMatrix::identity(k * r, k * r))
        * vc.sigma2;

    let location_region = exact
        .counts()
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
        .collect();

    Ok(ModelMatrices {
        counts: exact.clone(),
        genotypes: k,
        replicates: r,
        sigma2: vc.sigma2,
        f,
        x,
        z,
        g,
        location_block,
        location_region,
        variance: *vc,
    })
}

/// Row indices of the observations at location `j`, genotype-major.
fn location_rows(mm: &ModelMatrices, j: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(mm.genotypes * mm.replicates);
    for k in 0..mm.genotypes {
        for l in 0..mm.replicates {
            idx.push(mm.row(k, j, l));
        }
    }
    idx
}

/// `R⁻¹ A` using the location-block structure of `R`.
fn apply_residual_precision(mm: &ModelMatrices, block_inv: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for j in 0..mm.locations() {
        let idx = location_rows(mm, j);
        let local = a.select_rows(idx.iter());
        let prod = block_inv * local;
        for (row, &i) in idx.iter().enumerate() {
            out.set_row(i, &prod.row(row));
        }
    }
    out
}

fn henderson_from_products(
    mm: &ModelMatrices,
    xrx: &DMatrix<f64>,
    zrx: &DMatrix<f64>,
    zrz: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let g_inv = linalg::spd_inverse(&mm.g)?;
    let xrx_ginv = linalg::pseudo_inverse_sym(xrx);
    let inner = linalg::symmetrize(zrz + g_inv - zrx * xrx_ginv * zrx.transpose());
    linalg::spd_inverse_checked(&inner)
}

/// Henderson's prediction-error covariance of the BLUP of α,
/// `(ZᵀR⁻¹Z + G⁻¹ − ZᵀR⁻¹X(XᵀR⁻¹X)⁻XᵀR⁻¹Z)⁻¹`, using the block structure of
/// `R`. The generalized inverse is an eigenvalue pseudo-inverse, which
/// covers sub-regions without locations.
pub fn henderson_mse(mm: &ModelMatrices) -> Result<DMatrix<f64>> {
    let block_inv = linalg::spd_inverse(&mm.location_block)?;
    let rx = apply_residual_precision(mm, &block_inv, &mm.x);
    let rz = apply_residual_precision(mm, &block_inv, &mm.z);
    let xrx = mm.x.transpose() * &rx;
    let zrx = mm.z.transpose() * &rx;
    let zrz = mm.z.transpose() * &rz;
    henderson_from_products(mm, &xrx, &zrx, &zrz)
}

/// Same as [`henderson_mse`] but factors the full dense `R`.
pub fn henderson_mse_dense(mm: &ModelMatrices) -> Result<DMatrix<f64>> {
    let r = mm.residual_covariance()?;
    let chol = r
        .cholesky()
        .ok_or_else(|| DesignError::Numerical("residual covariance is not positive definite".into()))?;
    let rx = chol.solve(&mm.x);
    let rz = chol.solve(&mm.z);
    let xrx = mm.x.transpose() * &rx;
    let zrx = mm.z.transpose() * &rx;
    let zrz = mm.z.transpose() * &rz;
    henderson_from_products(mm, &xrx, &zrx, &zrz)
}

/// MSE of the contrast `α_k − α_k'` from the MSE of α.
pub fn contrast_mse(alpha_mse: &DMatrix<f64>, subregions: usize, k: usize, k_prime: usize) -> DMatrix<f64> {
    let genotypes = alpha_mse.nrows() / subregions;
    let mut e = DMatrix::zeros(1, genotypes);
    e[(0, k)] = 1.0;
    e[(0, k_prime)] = -1.0;
    let t = e.kronecker(&DMatrix::<f64>::identity(subregions, subregions));
    &t * alpha_mse * t.transpose()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulationConfig {
    pub replications: usize,
    pub seed: u64,
    /// Sub-region means μ; zero when absent.
    pub fixed_means: Option<Vec<f64>>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            replications: 20_000,
            seed: 20_240_601,
            fixed_means: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMse {
    /// Average of `(α̂ − α)(α̂ − α)ᵀ`.
    pub mse: DMatrix<f64>,
    /// Monte Carlo standard error of every entry.
    pub std_err: DMatrix<f64>,
    pub replications: usize,
}

impl EmpiricalMse {
    /// `|empirical − analytic| / std_err` for every entry.
    pub fn z_scores(&self, analytic: &DMatrix<f64>) -> Vec<f64> {
        self.mse
            .iter()
            .zip(analytic.iter())
            .zip(self.std_err.iter())
            .map(|((e, a), s)| {
                let diff = (e - a).abs();
                if *s > 0.0 {
                    diff / s
                } else if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }

    /// Fraction of entries whose z-score is at most `bound`.
    pub fn fraction_within(&self, analytic: &DMatrix<f64>, bound: f64) -> f64 {
        let z = self.z_scores(analytic);
        z.iter().filter(|v| **v <= bound).count() as f64 / z.len() as f64
    }
}

/// Random effects and errors of one simulated trial.
struct Draw {
    alpha: DVector<f64>,
    y: DVector<f64>,
}

struct Sampler<'a> {
    mm: &'a ModelMatrices,
    chol_g: DMatrix<f64>,
    means: Vec<f64>,
    sd_location: f64,
    sd_interaction: f64,
    sd_replicate: f64,
    sd_error: f64,
}

impl Sampler<'_> {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Draw {
        let mm = self.mm;
        let (k, p, jn, r) = (mm.genotypes, mm.subregions(), mm.locations(), mm.replicates);
        let mut normal = || -> f64 { StandardNormal.sample(rng) };

        let mut alpha = DVector::zeros(k * p);
        for g in 0..k {
            let zs = DVector::from_iterator(p, (0..p).map(|_| normal()));
            alpha.rows_mut(g * p, p).copy_from(&(&self.chol_g * zs));
        }
        let lambda: Vec<f64> = (0..jn).map(|_| self.sd_location * normal()).collect();
        let gamma: Vec<f64> = (0..jn * k).map(|_| self.sd_interaction * normal()).collect();
        let b: Vec<f64> = (0..jn * r).map(|_| self.sd_replicate * normal()).collect();

        let mut y = DVector::zeros(mm.rows());
        for g in 0..k {
            for j in 0..jn {
                let i = mm.location_region[j];
                for l in 0..r {
                    let e = self.sd_error * normal();
                    y[mm.row(g, j, l)] =
                        self.means[i] + alpha[g * p + i] + lambda[j] + gamma[g * jn + j] + b[j * r + l] + e;
                }
            }
        }
        Draw { alpha, y }
    }
}

/// Linear map `Y ↦ α̂` from the mixed-model equations
/// `[XᵀR⁻¹X  XᵀR⁻¹Z; ZᵀR⁻¹X  ZᵀR⁻¹Z + G⁻¹] (β; α) = (XᵀR⁻¹Y; ZᵀR⁻¹Y)`.
fn blup_operator(mm: &ModelMatrices) -> Result<DMatrix<f64>> {
    let p = mm.subregions();
    let q = mm.z.ncols();
    let n = mm.rows();
    let mut w = DMatrix::zeros(n, p + q);
    w.columns_mut(0, p).copy_from(&mm.x);
    w.columns_mut(p, q).copy_from(&mm.z);
    let block_inv = linalg::spd_inverse(&mm.location_block)?;
    let rw = apply_residual_precision(mm, &block_inv, &w);
    let mut coef = w.transpose() * &rw;
    let g_inv = linalg::spd_inverse(&mm.g)?;
    let mut lower = coef.view_mut((p, p), (q, q));
    lower += g_inv;
    let coef_inv = linalg::pseudo_inverse_sym(&linalg::symmetrize(coef));
    let alpha_rows = coef_inv.rows(p, q).into_owned();
    Ok(alpha_rows * rw.transpose())
}

/// Monte Carlo estimate of the BLUP's prediction-error covariance.
///
/// Replication `i` draws from a ChaCha8 stream selected by `(seed, i)`, and
/// replications are summed in fixed-size chunks that are combined in order,
/// so results are bit-identical for a given seed regardless of threading.
pub fn simulate_empirical_mse(
    mm: &ModelMatrices,
    vc: &VarianceComponents,
    gc: &GenotypeCovariance,
    cfg: &SimulationConfig,
) -> Result<EmpiricalMse> {
    if cfg.replications < 1 {
        return Err(DesignError::invalid("replications", "must be at least 1"));
    }
    let p = mm.subregions();
    let means = match &cfg.fixed_means {
        Some(m) if m.len() != p => {
            return Err(DesignError::invalid(
                "fixed-means",
                format!("expected {p} values, got {}", m.len()),
            ))
        }
        Some(m) => m.clone(),
        None => vec![0.0; p],
    };
    let chol_g = gc
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| DesignError::Numerical("genotype covariance Cholesky failed".into()))?
        .unpack();
    let sampler = Sampler {
        mm,
        chol_g,
        means,
        sd_location: (vc.sigma2 * vc.v1).sqrt(),
        sd_interaction: (vc.sigma2 * vc.v2).sqrt(),
        sd_replicate: (vc.sigma2 * vc.v3).sqrt(),
        sd_error: vc.sigma2.sqrt(),
    };
    let operator = blup_operator(mm)?;
    let dim = operator.nrows();

    let chunks: Vec<(usize, usize)> = (0..cfg.replications)
        .step_by(SIMULATION_CHUNK)
        .map(|start| (start, (start + SIMULATION_CHUNK).min(cfg.replications)))
        .collect();
    let sums = par::map(chunks, |(start, end)| {
        let mut first = DMatrix::<f64>::zeros(dim, dim);
        let mut second = DMatrix::<f64>::zeros(dim, dim);
        for rep in start..end {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(rep as u64);
            let draw = sampler.draw(&mut rng);
            let err = &operator * &draw.y - &draw.alpha;
            let outer = &err * err.transpose();
            second += outer.component_mul(&outer);
            first += outer;
        }
        (first, second)
    });

    let mut first = DMatrix::<f64>::zeros(dim, dim);
    let mut second = DMatrix::<f64>::zeros(dim, dim);
    for (a, b) in sums {
        first += a;
        second += b;
    }
    let n = cfg.replications as f64;
    let mse = first / n;
    let var = second / n - mse.component_mul(&mse);
    let std_err = var.map(|v| (v.max(0.0) / n).sqrt());
    Ok(EmpiricalMse {
        mse,
        std_err,
        replications: cfg.replications,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{adjusted_covariance, mse_contrasts, mse_genotype_effects, ApproximateDesign};

    fn setup(p: usize, k: usize, counts: Vec<usize>) -> (ExactDesign, VarianceComponents, GenotypeCovariance, ProblemDims) {
        let exact = ExactDesign::new(counts).unwrap();
        let vc = VarianceComponents::new(2.0, 0.8, 0.6, 0.4).unwrap();
        let mut d = DMatrix::from_fn(p, p, |i, j| if i == j { 3.0 + i as f64 } else { 1.2 });
        d[(0, p - 1)] = 0.4;
        d[(p - 1, 0)] = 0.4;
        let gc = GenotypeCovariance::general(d).unwrap();
        let dims = ProblemDims::new(p, k, exact.total(), 2).unwrap();
        (exact, vc, gc, dims)
    }

    #[test]
    fn smallest_instance() {
        let exact = ExactDesign::new(vec![1]).unwrap();
        let vc = VarianceComponents::new(1.5, 0.7, 0.3, 0.2).unwrap();
        let gc = GenotypeCovariance::general(DMatrix::from_element(1, 1, 2.0)).unwrap();
        // K = 1 is below the public minimum, so build the dims by hand
        let dims = ProblemDims {
            subregions: 1,
            genotypes: 1,
            locations: 1,
            replicates: 2,
        };
        let mm = assemble(&exact, &vc, &gc, &dims).unwrap();
        assert_eq!(mm.x, DMatrix::from_element(2, 1, 1.0));
        assert_eq!(mm.z, DMatrix::from_element(2, 1, 1.0));
        let expect = (DMatrix::from_element(2, 2, 0.7 + 0.3) + DMatrix::identity(2, 2) * (0.2 + 1.0)) * 1.5;
        assert!((mm.residual_covariance().unwrap() - expect).amax() < 1e-15);
    }

    #[test]
    fn two_by_two_assembly() {
        let (exact, vc, gc, dims) = setup(2, 2, vec![1, 1]);
        let mm = assemble(&exact, &vc, &gc, &dims).unwrap();
        assert_eq!((mm.x.nrows(), mm.x.ncols()), (8, 2));
        assert_eq!((mm.z.nrows(), mm.z.ncols()), (8, 4));
        let f = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(mm.f, f);
        assert_eq!(mm.h().nrows(), 4);
    }

    #[test]
    fn maize_row_count() {
        let exact = ExactDesign::new(vec![7, 3, 3, 6, 1]).unwrap();
        let sc = crate::dataset::maize_fa_scenario(20, 50.0).unwrap();
        let mm = assemble(&exact, &sc.variance, &sc.covariance, &sc.dims).unwrap();
        assert_eq!(mm.rows(), 80);
    }

    #[test]
    fn structured_matches_dense() {
        let (exact, vc, gc, dims) = setup(3, 3, vec![2, 0, 3]);
        let mm = assemble(&exact, &vc, &gc, &dims).unwrap();
        let a = henderson_mse(&mm).unwrap();
        let b = henderson_mse_dense(&mm).unwrap();
        assert!(linalg::relative_frobenius(&a, &b) < 1e-11);
    }

    #[test]
    fn henderson_matches_closed_form_and_contrasts() {
        let (exact, vc, gc, dims) = setup(3, 3, vec![2, 1, 3]);
        let mm = assemble(&exact, &vc, &gc, &dims).unwrap();
        let hend = henderson_mse(&mm).unwrap();
        let adj = adjusted_covariance(&gc, &vc, &dims).unwrap();
        let w = ApproximateDesign::from_exact(&exact).unwrap();
        let closed = mse_genotype_effects(&w, &adj, &gc, &vc, &dims).unwrap();
        assert!(linalg::relative_frobenius(&hend, &closed) < 1e-8);
        let theta = mse_contrasts(&w, &adj, &vc, &dims).unwrap();
        for (k, k2) in [(0, 1), (0, 2), (1, 2)] {
            let c = contrast_mse(&hend, 3, k, k2);
            assert!(linalg::relative_frobenius(&c, &theta) < 1e-8);
        }
    }

    #[test]
    fn location_and_replicate_variances_cancel() {
        let (exact, vc, gc, dims) = setup(3, 2, vec![1, 2, 0]);
        let base = henderson_mse(&assemble(&exact, &vc, &gc, &dims).unwrap()).unwrap();
        for (v1, v3) in [(0.0, 0.0), (5.0, 0.0), (0.0, 5.0), (5.0, 5.0)] {
            let alt = VarianceComponents::new(vc.sigma2, v1, vc.v2, v3).unwrap();
            let m = henderson_mse(&assemble(&exact, &alt, &gc, &dims).unwrap()).unwrap();
            assert!(linalg::relative_frobenius(&m, &base) < 1e-8);
        }
    }

    #[test]
    fn rejects_oversized_model() {
        let (_, vc, gc, _) = setup(2, 2, vec![1, 1]);
        let exact = ExactDesign::new(vec![60_000, 0]).unwrap();
        let dims = ProblemDims::new(2, 2, 60_000, 2).unwrap();
        assert!(assemble(&exact, &vc, &gc, &dims).is_err());
    }

    #[test]
    fn sampled_genotype_effects_have_model_covariance() {
        let (exact, vc, gc, dims) = setup(2, 2, vec![1, 1]);
        let mm = assemble(&exact, &vc, &gc, &dims).unwrap();
        let chol_g = gc.matrix().clone().cholesky().unwrap().unpack();
        let sampler = Sampler {
            mm: &mm,
            chol_g,
            means: vec![0.0; 2],
            sd_location: 0.0,
            sd_interaction: 0.0,
            sd_replicate: 0.0,
            sd_error: 1.0,
        };
        let reps = 20_000;
        let mut acc = DMatrix::<f64>::zeros(4, 4);
        for i in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            rng.set_stream(i as u64);
            let a = sampler.draw(&mut rng).alpha;
            acc += &a * a.transpose();
        }
        let cov = acc / reps as f64;
        let expect = DMatrix::<f64>::identity(2, 2).kronecker(gc.matrix());
        assert!(linalg::relative_frobenius(&cov, &expect) < 1e-1);
    }

    #[test]
    fn simulation_is_reproducible() {
        let (exact, vc, gc, dims) = setup(2, 2, vec![1, 2]);
        let mm = assemble(&exact, &vc, &gc, &dims).unwrap();
        let cfg = SimulationConfig {
            replications: 1200,
            seed: 99,
            fixed_means: None,
        };
        let a = simulate_empirical_mse(&mm, &vc, &gc, &cfg).unwrap();
        let b = simulate_empirical_mse(&mm, &vc, &gc, &cfg).unwrap();
        assert_eq!(a, b);
        let bad = SimulationConfig {
            fixed_means: Some(vec![1.0]),
            ..cfg
        };
        assert!(simulate_empirical_mse(&mm, &vc, &gc, &bad).is_err());
    }
}
