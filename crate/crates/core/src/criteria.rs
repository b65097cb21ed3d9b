//! Standard and weighted A-criteria and their equivalence-theorem
//! certificates.
//!
//! With `B = (M(ξ) + Δ⁻¹)⁻¹` and `H = 𝕀` (standard) or `H = L = diag(ℓ)`
//! (weighted), the criterion is `Φ(ξ) = tr(H B)`. Its partial derivative in
//! `wᵢ` is `−(BHB)ᵢᵢ`, so a design is optimal iff
//! `(BHB)ᵢᵢ ≤ tr(M B H B)` for every sub-region, with equality on the support.
//! Constant factors in front of the MSE are dropped here and only restored in
//! reporting.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, SpdWorkspace};
use crate::model::{AdjustedCovariance, ApproximateDesign, SubRegionLoads};

/// Weights at or below this value count as outside the support.
pub const SUPPORT_TOL: f64 = 1e-8;

/// Relative certificate tolerance for solver output.
pub const SOLVER_CERT_TOL: f64 = 1e-7;

/// Relative certificate tolerance for designs quoted with two decimals.
pub const ROUNDED_CERT_TOL: f64 = 2e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Criterion {
    StandardA,
    WeightedA(SubRegionLoads),
}

impl Criterion {
    /// Diagonal of `H`.
    pub fn loads(&self, p: usize) -> Vec<f64> {
        match self {
            Criterion::StandardA => vec![1.0; p],
            Criterion::WeightedA(l) => l.values().to_vec(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::StandardA => "a",
            Criterion::WeightedA(_) => "weighted-a",
        }
    }
}

/// Optimality-condition residuals of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DesignCertificate {
    pub criterion_value: f64,
    /// `tr(M B H B)`.
    pub lhs: f64,
    /// `(BHB)ᵢᵢ` for every sub-region.
    pub rhs: Vec<f64>,
    /// `maxᵢ (rhsᵢ − lhs)`; non-positive at an optimum.
    pub max_violation: f64,
    /// Spread of `rhsᵢ` over the support.
    pub support_equality_spread: f64,
}

impl DesignCertificate {
    pub fn relative_violation(&self) -> f64 {
        self.max_violation / self.lhs
    }

    pub fn relative_spread(&self) -> f64 {
        self.support_equality_spread / self.lhs
    }

    /// Both the inequality and the support equality hold to `rel_tol · lhs`.
    pub fn is_certified(&self, rel_tol: f64) -> bool {
        self.relative_violation() <= rel_tol && self.relative_spread() <= rel_tol
    }

    /// Index of the sub-region whose inequality is most violated.
    pub fn steepest_direction(&self) -> usize {
        argmax(&self.rhs)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// `Φ(ξ) = tr(H (M(ξ) + Δ⁻¹)⁻¹)`.
pub fn criterion_value(design: &ApproximateDesign, adj: &AdjustedCovariance, crit: &Criterion) -> f64 {
    let mut eval = CriterionEvaluator::new(adj, crit);
    eval.value(design.weights())
}

pub fn optimality_condition(
    design: &ApproximateDesign,
    adj: &AdjustedCovariance,
    crit: &Criterion,
) -> DesignCertificate {
    let p = adj.subregions();
    let b = linalg::spd_inverse(&adj.precision(design)).expect("M + Δ⁻¹ is positive definite");
    let h = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(crit.loads(p)));
    let bhb = &b * &h * &b;
    let value = (&h * &b).trace();
    certificate_from_parts(design.weights(), value, |i| bhb[(i, i)])
}

fn certificate_from_parts(weights: &[f64], value: f64, rhs_at: impl Fn(usize) -> f64) -> DesignCertificate {
    let rhs: Vec<f64> = (0..weights.len()).map(rhs_at).collect();
    let lhs: f64 = weights.iter().zip(&rhs).map(|(w, r)| w * r).sum();
    let max_violation = rhs.iter().map(|r| r - lhs).fold(f64::NEG_INFINITY, f64::max);
    let support: Vec<f64> = weights
        .iter()
        .zip(&rhs)
        .filter(|(w, _)| **w > SUPPORT_TOL)
        .map(|(_, r)| *r)
        .collect();
    let spread = if support.is_empty() {
        0.0
    } else {
        support.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - support.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    DesignCertificate {
        criterion_value: value,
        lhs,
        rhs,
        max_violation,
        support_equality_spread: spread,
    }
}

/// Allocation-free evaluator of the criterion and its derivatives for a
/// fixed Δ and criterion. Used inside solvers and the exact enumeration.
#[derive(Debug, Clone)]
pub struct CriterionEvaluator {
    p: usize,
    delta_inv: Vec<f64>,
    loads: Vec<f64>,
    precision: Vec<f64>,
    ws: SpdWorkspace,
    b: Vec<f64>,
    bhb: Vec<f64>,
}

impl CriterionEvaluator {
    pub fn new(adj: &AdjustedCovariance, crit: &Criterion) -> Self {
        let p = adj.subregions();
        CriterionEvaluator {
            p,
            delta_inv: linalg::to_row_major(adj.delta_inv()),
            loads: crit.loads(p),
            precision: vec![0.0; p * p],
            ws: SpdWorkspace::new(p),
            b: vec![0.0; p * p],
            bhb: vec![0.0; p * p],
        }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    fn fill_precision(&mut self, w: &[f64]) {
        self.precision.copy_from_slice(&self.delta_inv);
        for (i, wi) in w.iter().enumerate() {
            self.precision[i * self.p + i] += wi;
        }
    }

    pub fn value(&mut self, w: &[f64]) -> f64 {
        self.fill_precision(w);
        self.ws
            .weighted_trace_of_inverse(&self.precision, &self.loads)
            .expect("M + Δ⁻¹ is positive definite")
    }

    /// Criterion value at counts `n` with `w = n / total`.
    pub fn value_counts(&mut self, counts: &[usize], total: f64) -> f64 {
        self.precision.copy_from_slice(&self.delta_inv);
        for (i, &c) in counts.iter().enumerate() {
            self.precision[i * self.p + i] += c as f64 / total;
        }
        self.ws
            .weighted_trace_of_inverse(&self.precision, &self.loads)
            .expect("M + Δ⁻¹ is positive definite")
    }

    /// Refreshes `B` and `BHB` at `w` and returns the criterion value.
    pub fn update(&mut self, w: &[f64]) -> f64 {
        self.fill_precision(w);
        let p = self.p;
        let inv = self.ws.inverse(&self.precision).expect("M + Δ⁻¹ is positive definite");
        self.b.copy_from_slice(inv);
        let mut value = 0.0;
        for i in 0..p {
            value += self.loads[i] * self.b[i * p + i];
            for j in 0..=i {
                let mut s = 0.0;
                for k in 0..p {
                    s += self.b[i * p + k] * self.loads[k] * self.b[k * p + j];
                }
                self.bhb[i * p + j] = s;
                self.bhb[j * p + i] = s;
            }
        }
        value
    }

    /// `B` from the last [`update`](Self::update).
    pub fn posterior(&self) -> &[f64] {
        &self.b
    }

    /// `(BHB)ᵢᵢ` from the last update; equals `−∂Φ/∂wᵢ`.
    pub fn rhs(&self, i: usize) -> f64 {
        self.bhb[i * self.p + i]
    }

    /// Hessian entry `∂²Φ/∂wᵢ∂wⱼ = 2 Bᵢⱼ (BHB)ᵢⱼ` from the last update.
    pub fn hessian(&self, i: usize, j: usize) -> f64 {
        2.0 * self.b[i * self.p + j] * self.bhb[i * self.p + j]
    }

    /// Certificate at `w` computed through this evaluator.
    pub fn certificate(&mut self, w: &[f64]) -> DesignCertificate {
        let value = self.update(w);
        let bhb = &self.bhb;
        let p = self.p;
        certificate_from_parts(w, value, |i| bhb[i * p + i])
    }
}
