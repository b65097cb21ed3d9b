//! Dense symmetric linear algebra helpers.
//!
//! Two layers live here: thin wrappers over `nalgebra` for validation and
//! inversion of small symmetric matrices, and an allocation-free Cholesky
//! kernel on row-major slices used in the hot loops of the optimizer and
//! the exact-design enumeration.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{DesignError, Result};

/// Relative eigenvalue floor for positive definiteness.
pub const PD_RELATIVE_TOL: f64 = 1e-10;

/// Singular values below this fraction of the largest are dropped in
/// generalized inverses.
pub const PINV_RELATIVE_TOL: f64 = 1e-12;

/// Largest condition number accepted before reporting numerical failure.
pub const MAX_CONDITION: f64 = 1e14;

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Checks symmetry and positive definiteness with a tolerance relative to the
/// largest eigenvalue.
pub fn validate_spd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(DesignError::invalid(
            name,
            format!("expected a non-empty square matrix, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(DesignError::invalid(name, "matrix has non-finite entries"));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = max_asymmetry(m);
    if asym > 1e-10 * scale {
        return Err(DesignError::NotSymmetric {
            name: name.to_string(),
            asymmetry: asym,
        });
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if max <= 0.0 || min <= PD_RELATIVE_TOL * max {
        return Err(DesignError::NotPositiveDefinite {
            name: name.to_string(),
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    Ok(())
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| DesignError::Numerical("Cholesky factorization failed".into()))?;
    let inv = chol.inverse();
    Ok(symmetrize(inv))
}

/// Like [`spd_inverse`] but rejects matrices whose spectral condition number
/// exceeds [`MAX_CONDITION`].
pub fn spd_inverse_checked(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = condition_number(m);
    if !(cond.is_finite() && cond <= MAX_CONDITION) {
        return Err(DesignError::IllConditioned { condition: cond });
    }
    spd_inverse(m)
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Moore-Penrose inverse of a symmetric positive semi-definite matrix.
pub fn pseudo_inverse_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m.clone()));
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cutoff = PINV_RELATIVE_TOL * max;
    let mut out = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() <= cutoff {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        out += (v * v.transpose()) / lambda;
    }
    out
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Scratch space for repeated inversion of `P×P` SPD matrices stored
/// row-major in plain slices.
#[derive(Debug, Clone)]
pub struct SpdWorkspace {
    n: usize,
    chol: Vec<f64>,
    linv: Vec<f64>,
    inv: Vec<f64>,
}

impl SpdWorkspace {
    pub fn new(n: usize) -> Self {
        SpdWorkspace {
            n,
            chol: vec![0.0; n * n],
            linv: vec![0.0; n * n],
            inv: vec![0.0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Lower Cholesky factor of `a` into the workspace. Returns `false` when
    /// `a` is not numerically positive definite.
    fn factor(&mut self, a: &[f64]) -> bool {
        let n = self.n;
        let l = &mut self.chol;
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return false;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        true
    }

    /// Inverts the lower factor in place into `linv`.
    fn invert_factor(&mut self) {
        let n = self.n;
        let l = &self.chol;
        let li = &mut self.linv;
        li.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            li[j * n + j] = 1.0 / l[j * n + j];
            for i in (j + 1)..n {
                let mut s = 0.0;
                for k in j..i {
                    s -= l[i * n + k] * li[k * n + j];
                }
                li[i * n + j] = s / l[i * n + i];
            }
        }
    }

    /// Weighted trace `Σ_i h_i (A⁻¹)_ii` without forming the full inverse.
    pub fn weighted_trace_of_inverse(&mut self, a: &[f64], h: &[f64]) -> Option<f64> {
        if !self.factor(a) {
            return None;
        }
        self.invert_factor();
        let n = self.n;
        // (A⁻¹)_ii = Σ_k (L⁻¹)_{ki}²
        let mut total = 0.0;
        for (i, &hi) in h.iter().enumerate().take(n) {
            let mut d = 0.0;
            for k in i..n {
                let v = self.linv[k * n + i];
                d += v * v;
            }
            total += hi * d;
        }
        Some(total)
    }

    /// Full inverse of `a`, row-major.
    pub fn inverse(&mut self, a: &[f64]) -> Option<&[f64]> {
        if !self.factor(a) {
            return None;
        }
        self.invert_factor();
        let n = self.n;
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for k in i.max(j)..n {
                    s += self.linv[k * n + i] * self.linv[k * n + j];
                }
                self.inv[i * n + j] = s;
                self.inv[j * n + i] = s;
            }
        }
        Some(&self.inv)
    }
}

pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = vec![0.0; n * m.ncols()];
    for i in 0..n {
        for j in 0..m.ncols() {
            out[i * m.ncols() + j] = m[(i, j)];
        }
    }
    out
}

pub fn from_row_major(n: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, data)
}
