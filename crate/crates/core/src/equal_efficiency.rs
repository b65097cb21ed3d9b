//! Designs with the same prediction variance in every sub-region.
//!
//! Solves `gᵢ(w) = g₁(w)` for `i = 2, …, P` where `gᵢ` is the i-th diagonal
//! entry of `(M(ξ) + Δ⁻¹)⁻¹`, treating `w₁, …, w_{P−1}` as unknowns and
//! `w_P = 1 − Σ wᵢ`. Damped Newton with a central-difference Jacobian,
//! falling back to Levenberg-Marquardt when the line search stalls.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::criteria::{Criterion, CriterionEvaluator};
use crate::error::{DesignError, Result};
use crate::exact::efficient_rounding;
use crate::model::{AdjustedCovariance, ApproximateDesign, ExactDesign};
use crate::optimizer::{optimize, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EqualEfficiencyConfig {
    pub max_iterations: usize,
    /// Relative tolerance on `maxᵢ |g₁ − gᵢ| / g₁`.
    pub tol: f64,
    pub fd_step: f64,
    /// Settings for the A-optimal design used as the starting point.
    pub initial: SolverConfig,
}

impl Default for EqualEfficiencyConfig {
    fn default() -> Self {
        EqualEfficiencyConfig {
            max_iterations: 200,
            tol: 1e-10,
            fd_step: 1e-7,
            initial: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EqualEfficiencySolution {
    pub design: ApproximateDesign,
    /// `maxᵢ |g₁ − gᵢ|`.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Diagonal of `(M + Δ⁻¹)⁻¹` at the solution.
    pub variances: Vec<f64>,
}

impl EqualEfficiencySolution {
    pub fn relative_residual(&self) -> f64 {
        self.residual_norm / self.variances[0]
    }
}

/// Diagonal entries of `(M(ξ) + Δ⁻¹)⁻¹`.
pub fn subregion_variances(design: &ApproximateDesign, adj: &AdjustedCovariance) -> Result<Vec<f64>> {
    let b = adj.posterior(design)?;
    Ok(b.diagonal().iter().copied().collect())
}

/// Relative spread `(max gᵢ − min gᵢ) / max gᵢ` of the sub-region variances.
pub fn variance_spread(design: &ApproximateDesign, adj: &AdjustedCovariance) -> Result<f64> {
    let g = subregion_variances(design, adj)?;
    let max = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = g.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((max - min) / max)
}

struct System {
    eval: CriterionEvaluator,
    p: usize,
}

impl System {
    fn weights(&self, x: &[f64]) -> Vec<f64> {
        let mut w = x.to_vec();
        w.push(1.0 - x.iter().sum::<f64>());
        w
    }

    fn diag(&mut self, x: &[f64]) -> Vec<f64> {
        let w = self.weights(x);
        self.eval.update(&w);
        let p = self.p;
        let b = self.eval.posterior();
        (0..p).map(|i| b[i * p + i]).collect()
    }

    fn residual(&mut self, x: &[f64]) -> DVector<f64> {
        let g = self.diag(x);
        DVector::from_iterator(self.p - 1, (1..self.p).map(|i| g[0] - g[i]))
    }

    fn jacobian(&mut self, x: &[f64], h: f64) -> DMatrix<f64> {
        let n = self.p - 1;
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        for j in 0..n {
            xp[j] = x[j] + h;
            let fp = self.residual(&xp);
            xp[j] = x[j] - h;
            let fm = self.residual(&xp);
            xp[j] = x[j];
            jac.set_column(j, &((fp - fm) / (2.0 * h)));
        }
        jac
    }
}

fn feasible_step(x: &[f64], d: &DVector<f64>) -> f64 {
    let mut max_step = 1.0f64;
    let mut last_w = 1.0 - x.iter().sum::<f64>();
    let mut last_d = 0.0;
    for (xi, di) in x.iter().zip(d.iter()) {
        if *di < 0.0 {
            max_step = max_step.min(-xi / di);
        }
        last_d -= di;
    }
    if last_d < 0.0 {
        last_w = last_w.max(0.0);
        max_step = max_step.min(-last_w / last_d);
    }
    max_step.max(0.0)
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

pub fn solve_equal_efficiency(
    adj: &AdjustedCovariance,
    cfg: &EqualEfficiencyConfig,
) -> Result<EqualEfficiencySolution> {
    let p = adj.subregions();
    if p < 2 {
        return Err(DesignError::invalid("subregions", "equal efficiency needs at least 2"));
    }
    let start = optimize(adj, &Criterion::StandardA, &cfg.initial)?;
    let mut sys = System {
        eval: CriterionEvaluator::new(adj, &Criterion::StandardA),
        p,
    };
    let mut x: Vec<f64> = start.design.weights()[..p - 1].to_vec();
    let mut f = sys.residual(&x);
    let mut lm_damping: Option<f64> = None;
    let mut iterations = 0;

    let converged_at = |sys: &mut System, x: &[f64], f: &DVector<f64>| -> bool {
        let g0 = sys.diag(x)[0];
        inf_norm(f) <= cfg.tol * g0
    };

    while iterations < cfg.max_iterations && !converged_at(&mut sys, &x, &f) {
        iterations += 1;
        let jac = sys.jacobian(&x, cfg.fd_step);
        let base = f.norm_squared();

        let dir = match lm_damping {
            None => jac.clone().lu().solve(&(-&f)),
            Some(mu) => {
                let jt = jac.transpose();
                let lhs = &jt * &jac + DMatrix::identity(p - 1, p - 1) * mu;
                lhs.cholesky().map(|c| c.solve(&(-(&jt * &f))))
            }
        };
        let accepted = dir.and_then(|d| {
            let mut step = feasible_step(&x, &d);
            for _ in 0..50 {
                if step < 1e-14 {
                    break;
                }
                let trial: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| (a + step * b).max(0.0)).collect();
                if trial.iter().sum::<f64>() > 1.0 + 1e-15 {
                    step *= 0.5;
                    continue;
                }
                let ft = sys.residual(&trial);
                if ft.norm_squared() < base * (1.0 - 1e-4 * step) || ft.norm_squared() < base && step < 1.0 {
                    return Some((trial, ft));
                }
                step *= 0.5;
            }
            None
        });

        match accepted {
            Some((nx, nf)) => {
                x = nx;
                f = nf;
                lm_damping = lm_damping.map(|mu| (mu * 0.3).max(1e-12));
            }
            None => {
                // Newton stalled: switch to (or strengthen) least squares
                let scale = jac.norm_squared().max(f64::MIN_POSITIVE);
                lm_damping = Some(lm_damping.map_or(1e-6 * scale, |mu| mu * 10.0));
                if lm_damping.unwrap() > 1e12 * scale {
                    break;
                }
            }
        }
    }

    let w = sys.weights(&x).into_iter().map(|v| v.max(0.0)).collect();
    let design = ApproximateDesign::normalized(w)?;
    let variances = sys.diag(&design.weights()[..p - 1]);
    let residual_norm = variances
        .iter()
        .skip(1)
        .fold(0.0f64, |a, g| a.max((variances[0] - g).abs()));
    let converged = residual_norm <= cfg.tol * variances[0];
    Ok(EqualEfficiencySolution {
        design,
        residual_norm,
        converged,
        iterations,
        variances,
    })
}

/// Rounds a converged equal-efficiency solution to `total` locations.
pub fn exact_equal_efficiency(sol: &EqualEfficiencySolution, total: usize) -> Result<ExactDesign> {
    if !sol.converged {
        return Err(DesignError::NotConverged {
            iterations: sol.iterations,
            residual: sol.residual_norm,
        });
    }
    efficient_rounding(&sol.design, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset;

    #[test]
    fn compound_symmetry_gives_balanced() {
        let adj = dataset::maize_cs_scenario(20, 50.0).unwrap().adjusted().unwrap();
        let sol = solve_equal_efficiency(&adj, &EqualEfficiencyConfig::default()).unwrap();
        assert!(sol.converged);
        for w in sol.design.weights() {
            assert!((w - 0.2).abs() < 1e-10);
        }
        assert!(variance_spread(&ApproximateDesign::balanced(5), &adj).unwrap() < 1e-14);
    }

    #[test]
    fn maize_fa_solution() {
        let adj = dataset::maize_fa_scenario(20, 50.0).unwrap().adjusted().unwrap();
        let sol = solve_equal_efficiency(&adj, &EqualEfficiencyConfig::default()).unwrap();
        assert!(sol.converged, "{sol:?}");
        let expect = [0.342, 0.148, 0.205, 0.302, 0.003];
        for (w, e) in sol.design.weights().iter().zip(expect) {
            assert!((w - e).abs() <= 0.002, "{:?}", sol.design);
        }
        assert_eq!(exact_equal_efficiency(&sol, 20).unwrap().counts(), &[6, 3, 4, 6, 1]);
    }

    #[test]
    fn rounding_of_reference_rows() {
        let sol = |w: Vec<f64>| EqualEfficiencySolution {
            design: ApproximateDesign::normalized(w).unwrap(),
            residual_norm: 0.0,
            converged: true,
            iterations: 0,
            variances: vec![1.0],
        };
        let a = sol(vec![0.262, 0.183, 0.212, 0.239, 0.104]);
        assert_eq!(exact_equal_efficiency(&a, 40).unwrap().counts(), &[10, 7, 9, 10, 4]);
        let b = sol(vec![0.2; 5]);
        assert_eq!(exact_equal_efficiency(&b, 20).unwrap().counts(), &[4, 4, 4, 4, 4]);
        let mut c = sol(vec![0.2; 5]);
        c.converged = false;
        assert!(exact_equal_efficiency(&c, 20).is_err());
    }

    #[test]
    fn needs_two_subregions() {
        let adj = AdjustedCovariance::from_matrix(DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert!(solve_equal_efficiency(&adj, &EqualEfficiencyConfig::default()).is_err());
    }
}
