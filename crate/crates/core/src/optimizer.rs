//! Minimization of the A-criteria over the probability simplex.
//!
//! Each restart runs a classical first-order design algorithm (the
//! multiplicative update `wᵢ ← wᵢ·rhsᵢ/lhs` or a vertex-exchange step) until
//! the certificate is within a loose tolerance, then switches to an
//! active-set Newton iteration on the support using the closed-form Hessian
//! `2·(B ∘ BHB)`. The problem is convex, so all restarts should agree; the
//! best one is returned together with a freshly computed certificate.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::criteria::{optimality_condition, Criterion, CriterionEvaluator, DesignCertificate};
use crate::error::{DesignError, Result};
use crate::model::{AdjustedCovariance, ApproximateDesign, SubRegionLoads};
use crate::par;

/// Weights below this are set to zero in the returned design.
pub const TRUNCATION_TOL: f64 = 1e-12;

/// Relative violation at which the first-order phase hands over to Newton.
const WARM_START_TOL: f64 = 1e-3;
const FIRST_ORDER_WARMUP: usize = 200;
const POLISH_STEPS: usize = 3;
const VALUE_ROUNDOFF: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    Multiplicative,
    VertexExchange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Target for the relative certificate violation and support spread.
    pub convergence_tol: f64,
    pub restarts: usize,
    pub step_rule: StepRule,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 10_000,
            convergence_tol: 1e-9,
            restarts: 8,
            step_rule: StepRule::Multiplicative,
            seed: 0x5EED,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(DesignError::invalid("max-iterations", "must be at least 1"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(DesignError::invalid("convergence-tol", "must be positive"));
        }
        if self.restarts < 1 {
            return Err(DesignError::invalid("restarts", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedDesign {
    pub design: ApproximateDesign,
    pub certificate: DesignCertificate,
    /// Iterations used by the winning restart.
    pub iterations: usize,
    /// Whether the certificate meets `convergence_tol`.
    pub certified: bool,
    /// Final criterion value of every restart, in restart order.
    pub restart_values: Vec<f64>,
}

/// `wᵢ = ℓᵢ / Σℓ`.
pub fn proportional_design(loads: &SubRegionLoads) -> ApproximateDesign {
    ApproximateDesign::normalized(loads.values().to_vec()).expect("loads are positive")
}

pub fn optimize(adj: &AdjustedCovariance, crit: &Criterion, cfg: &SolverConfig) -> Result<OptimizedDesign> {
    cfg.validate()?;
    let p = adj.subregions();
    if let Criterion::WeightedA(l) = crit {
        if l.values().len() != p {
            return Err(DesignError::invalid(
                "loads",
                format!("expected {p} coefficients, got {}", l.values().len()),
            ));
        }
    }

    let starts = initial_points(p, cfg.restarts, cfg.seed);
    let runs = par::map(starts, |w0| {
        let mut eval = CriterionEvaluator::new(adj, crit);
        let (w, iterations) = run_restart(&mut eval, w0, cfg);
        let cert = eval.certificate(&w);
        let residual = cert.relative_violation().max(cert.relative_spread());
        (w, iterations, cert.criterion_value, residual)
    });

    // values within round-off of the minimum are compared by how well they
    // satisfy the optimality conditions
    let min_value = runs.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let mut best = None;
    for (i, run) in runs.iter().enumerate() {
        if run.2 <= min_value * (1.0 + VALUE_ROUNDOFF) && best.is_none_or(|b: usize| run.3 < runs[b].3) {
            best = Some(i);
        }
    }
    let best = best.expect("at least one restart");
    let restart_values = runs.iter().map(|r| r.2).collect();
    let (w, iterations, _, _) = runs.into_iter().nth(best).expect("at least one restart");

    let design = truncate(w)?;
    let certificate = optimality_condition(&design, adj, crit);
    let certified = certificate.is_certified(cfg.convergence_tol);
    Ok(OptimizedDesign {
        design,
        certificate,
        iterations,
        certified,
        restart_values,
    })
}

/// Balanced design followed by Dirichlet(1) draws.
fn initial_points(p: usize, restarts: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![vec![1.0 / p as f64; p]];
    for _ in 1..restarts {
        let mut w: Vec<f64> = (0..p).map(|_| Exp1.sample(&mut rng)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        out.push(w);
    }
    out
}

fn truncate(mut w: Vec<f64>) -> Result<ApproximateDesign> {
    for x in w.iter_mut() {
        if *x < TRUNCATION_TOL {
            *x = 0.0;
        }
    }
    ApproximateDesign::normalized(w)
}

fn run_restart(eval: &mut CriterionEvaluator, mut w: Vec<f64>, cfg: &SolverConfig) -> (Vec<f64>, usize) {
    let mut newton = false;
    for it in 0..cfg.max_iterations {
        let cert = eval.certificate(&w);
        if cert.is_certified(cfg.convergence_tol) {
            // a few extra Newton steps cost little and pin the weights down
            // to round-off
            let mut cert = cert;
            for _ in 0..POLISH_STEPS {
                match polish_step(eval, &mut w, &cert) {
                    Some(next) => cert = next,
                    None => break,
                }
            }
            return (w, it);
        }
        if !newton && (cert.relative_violation() < WARM_START_TOL || it >= FIRST_ORDER_WARMUP) {
            newton = true;
        }
        let progressed = newton && newton_step(eval, &mut w, &cert);
        if !progressed {
            match cfg.step_rule {
                StepRule::Multiplicative => multiplicative_step(&mut w, &cert),
                StepRule::VertexExchange => vertex_exchange_step(eval, &mut w, &cert),
            }
        }
    }
    (w, cfg.max_iterations)
}

fn renormalize(w: &mut [f64]) {
    for x in w.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
}

fn multiplicative_step(w: &mut [f64], cert: &DesignCertificate) {
    for (x, r) in w.iter_mut().zip(&cert.rhs) {
        *x *= r / cert.lhs;
    }
    renormalize(w);
}

/// Moves mass from the worst support point to the steepest direction with a
/// Newton step along that edge, then backtracks until the criterion drops.
fn vertex_exchange_step(eval: &mut CriterionEvaluator, w: &mut [f64], cert: &DesignCertificate) {
    let to = cert.steepest_direction();
    let from = (0..w.len())
        .filter(|&i| w[i] > 0.0 && i != to)
        .min_by(|&a, &b| cert.rhs[a].total_cmp(&cert.rhs[b]));
    let Some(from) = from else { return };
    let slope = cert.rhs[to] - cert.rhs[from];
    if slope <= 0.0 {
        return;
    }
    // eval holds B and BHB at w from the certificate call
    let curvature = eval.hessian(to, to) + eval.hessian(from, from) - 2.0 * eval.hessian(to, from);
    let mut t = if curvature > 0.0 { slope / curvature } else { w[from] };
    t = t.min(w[from]);
    let base = cert.criterion_value;
    let mut trial = w.to_vec();
    for _ in 0..40 {
        trial.copy_from_slice(w);
        trial[to] += t;
        trial[from] -= t;
        if eval.value(&trial) < base {
            w.copy_from_slice(&trial);
            renormalize(w);
            return;
        }
        t *= 0.5;
    }
}

/// One active-set Newton step. Returns `false` when no decrease was found.
/// Active set and Newton direction on it, with the directional derivative.
fn newton_direction(eval: &CriterionEvaluator, w: &[f64], cert: &DesignCertificate) -> Option<(Vec<usize>, Vec<f64>, f64)> {
    let p = w.len();
    let mut active: Vec<usize> = (0..p).filter(|&i| w[i] > 0.0).collect();
    // admit the most violated zero-weight direction
    let outside = (0..p)
        .filter(|&i| w[i] <= 0.0 && cert.rhs[i] > cert.lhs)
        .max_by(|&a, &b| cert.rhs[a].total_cmp(&cert.rhs[b]));
    if let Some(i) = outside {
        active.push(i);
        active.sort_unstable();
    }
    let s = active.len();
    if s < 2 {
        return None;
    }

    // eval holds B and BHB at w from the certificate call
    let mut kkt = DMatrix::zeros(s + 1, s + 1);
    let mut rhs = DVector::zeros(s + 1);
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate() {
            kkt[(a, b)] = eval.hessian(i, j);
        }
        kkt[(a, s)] = 1.0;
        kkt[(s, a)] = 1.0;
        // gradient is −rhs
        rhs[a] = cert.rhs[i];
    }
    let sol = kkt.lu().solve(&rhs)?;
    let dir: Vec<f64> = (0..s).map(|a| sol[a]).collect();
    let slope: f64 = active.iter().zip(&dir).map(|(&i, d)| -cert.rhs[i] * d).sum();
    Some((active, dir, slope))
}

fn max_feasible_step(w: &[f64], active: &[usize], dir: &[f64]) -> f64 {
    let mut max_step = 1.0f64;
    for (&i, &d) in active.iter().zip(dir) {
        if d < 0.0 {
            max_step = max_step.min(-w[i] / d);
        }
    }
    max_step
}

/// Full Newton step kept only if it shrinks the certificate residual. Near
/// the optimum the criterion is flat to round-off, so the value cannot
/// judge the step.
fn polish_step(eval: &mut CriterionEvaluator, w: &mut [f64], cert: &DesignCertificate) -> Option<DesignCertificate> {
    let (active, dir, _) = newton_direction(eval, w, cert)?;
    let step = max_feasible_step(w, &active, &dir);
    let mut trial = w.to_vec();
    for (&i, &d) in active.iter().zip(&dir) {
        trial[i] = (trial[i] + step * d).max(0.0);
    }
    renormalize(&mut trial);
    let next = eval.certificate(&trial);
    let residual = |c: &DesignCertificate| c.relative_violation().max(c.relative_spread());
    if residual(&next) < residual(cert) {
        w.copy_from_slice(&trial);
        Some(next)
    } else {
        None
    }
}

/// One active-set Newton step with backtracking. Returns `false` when no
/// decrease was found.
fn newton_step(eval: &mut CriterionEvaluator, w: &mut [f64], cert: &DesignCertificate) -> bool {
    let Some((active, dir, slope)) = newton_direction(eval, w, cert) else {
        return false;
    };
    if !(slope < 0.0) {
        return false;
    }

    let max_step = max_feasible_step(w, &active, &dir);
    let base = cert.criterion_value;
    let mut step = max_step;
    let mut trial = w.to_vec();
    for _ in 0..40 {
        trial.copy_from_slice(w);
        for (&i, &d) in active.iter().zip(&dir) {
            trial[i] += step * d;
        }
        if step == max_step {
            // coordinates reaching the boundary land exactly on it
            for (&i, &d) in active.iter().zip(&dir) {
                if d < 0.0 && (w[i] + step * d) <= 1e-15 {
                    trial[i] = 0.0;
                }
            }
        }
        renormalize(&mut trial);
        let value = eval.value(&trial);
        let armijo = value <= base + 1e-4 * step * slope;
        let roundoff = (step * slope).abs() < 1e-13 * base && value <= base * (1.0 + 1e-14);
        if armijo || roundoff {
            w.copy_from_slice(&trial);
            return true;
        }
        step *= 0.5;
    }
    false
}
