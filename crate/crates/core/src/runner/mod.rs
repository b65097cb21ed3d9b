//! Scenario sweeps over `(J, σ²)` grids and their reports.

mod config;
mod report;

use std::time::Instant;

pub use config::{
    load_config, parse_config, CriterionKind, EnumerationSettings, Mode, ModelSource, Scenario,
    ValidationSettings,
};
pub use report::{CellRecord, CertificateRecord, EqualEfficiencyRecord, ExactRecord, Report, ValidationRecord};

use crate::criteria::{criterion_value, optimality_condition, Criterion};
use crate::dataset::MaizeStructure;
use crate::equal_efficiency::{exact_equal_efficiency, solve_equal_efficiency};
use crate::error::{DesignError, Result};
use crate::exact::{efficient_rounding, enumerate_optimal};
use crate::linalg;
use crate::model::{mse_genotype_effects, ApproximateDesign, ExactDesign, ModelSetup};
use crate::optimizer::optimize;
use crate::oracle;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Report `wallTimeMs = 0` so that output is byte-reproducible.
    pub omit_timing: bool,
}

/// Bundled maize scenario for reference table 2 to 5.
pub fn bundled_table(which: u8) -> Result<Scenario> {
    let areas = || Criterion::WeightedA(crate::dataset::maize_areas());
    Ok(match which {
        2 => Scenario::maize(MaizeStructure::FactorAnalytic, Criterion::StandardA, Mode::Exact),
        3 => Scenario::maize(MaizeStructure::FactorAnalytic, areas(), Mode::Exact),
        4 => Scenario::maize(MaizeStructure::CompoundSymmetryPublished, areas(), Mode::Exact),
        5 => Scenario::maize(MaizeStructure::FactorAnalytic, Criterion::StandardA, Mode::EqualEff),
        _ => return Err(DesignError::invalid("which", format!("no bundled table {which} (expected 2 to 5)"))),
    })
}

pub fn run_scenario(sc: &Scenario) -> Result<Report> {
    run_scenario_with(sc, &RunOptions::default())
}

/// Runs every grid cell. Cells run concurrently; records come back in grid
/// order and the first failing cell (in that order) decides the error.
pub fn run_scenario_with(sc: &Scenario, opts: &RunOptions) -> Result<Report> {
    sc.check()?;
    let results = par::map(sc.cells(), |(j, s)| {
        let start = Instant::now();
        let mut rec = run_cell(sc, j, s)?;
        rec.wall_time_ms = if opts.omit_timing {
            0.0
        } else {
            start.elapsed().as_secs_f64() * 1e3
        };
        Ok(rec)
    });
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Report { records })
}

fn run_cell(sc: &Scenario, j: usize, sigma2: f64) -> Result<CellRecord> {
    let setup = sc.setup(j, sigma2)?;
    let adj = setup.adjusted()?;
    let crit = &sc.criterion;

    let base = |weights: &ApproximateDesign, counts: &ExactDesign, iterations: usize| -> Result<CellRecord> {
        let cert = optimality_condition(weights, &adj, crit);
        Ok(CellRecord {
            j,
            sigma2,
            mode: sc.mode.keyword().into(),
            criterion: crit.name().into(),
            weights: weights.weights().to_vec(),
            counts: counts.counts().to_vec(),
            criterion_value: cert.criterion_value,
            certificate: (&cert).into(),
            solver_iterations: iterations,
            wall_time_ms: 0.0,
            exact: None,
            equal_efficiency: None,
            validation: None,
        })
    };

    match sc.mode {
        Mode::Approx => {
            let opt = optimize(&adj, crit, &sc.solver)?;
            let rounded = efficient_rounding(&opt.design, j)?;
            base(&opt.design, &rounded, opt.iterations)
        }
        Mode::Exact => {
            let opt = optimize(&adj, crit, &sc.solver)?;
            let rounded = efficient_rounding(&opt.design, j)?;
            let approx_value = opt.certificate.criterion_value;
            let (counts, exact) = match enumerate_optimal(&adj, crit, j, &sc.enumeration.budget()) {
                Ok(res) => (res.design.clone(), ExactRecord {
                    method: "enumeration".into(),
                    value: res.value,
                    optimality_gap: res.value / approx_value - 1.0,
                    ties: if res.ties.len() > 1 {
                        res.ties.iter().map(|t| t.counts().to_vec()).collect()
                    } else {
                        Vec::new()
                    },
                    rounded: rounded.counts().to_vec(),
                }),
                Err(DesignError::BudgetExceeded { .. }) if !sc.enumeration.strict => {
                    let value = criterion_value(&ApproximateDesign::from_exact(&rounded)?, &adj, crit);
                    let rec = ExactRecord {
                        method: "rounding".into(),
                        value,
                        optimality_gap: value / approx_value - 1.0,
                        ties: Vec::new(),
                        rounded: rounded.counts().to_vec(),
                    };
                    (rounded.clone(), rec)
                }
                Err(e) => return Err(e),
            };
            let mut rec = base(&opt.design, &counts, opt.iterations)?;
            rec.exact = Some(exact);
            Ok(rec)
        }
        Mode::EqualEff => {
            let sol = solve_equal_efficiency(&adj, &sc.equal_efficiency)?;
            let counts = exact_equal_efficiency(&sol, j)?;
            let mut rec = base(&sol.design, &counts, sol.iterations)?;
            rec.equal_efficiency = Some(EqualEfficiencyRecord {
                converged: sol.converged,
                relative_residual: sol.relative_residual(),
                variances: sol.variances.clone(),
            });
            Ok(rec)
        }
        Mode::Validate => {
            let (weights, counts, iterations) = match &sc.validation.counts {
                Some(c) => {
                    let e = ExactDesign::new(c.clone())?;
                    (ApproximateDesign::from_exact(&e)?, e, 0)
                }
                None => {
                    let opt = optimize(&adj, crit, &sc.solver)?;
                    let rounded = efficient_rounding(&opt.design, j)?;
                    (opt.design, rounded, opt.iterations)
                }
            };
            let validation = validate_design(sc, &setup, &counts)?;
            let mut rec = base(&weights, &counts, iterations)?;
            rec.validation = Some(validation);
            Ok(rec)
        }
    }
}

/// Henderson MSE against the closed form, then Monte Carlo against both.
fn validate_design(sc: &Scenario, setup: &ModelSetup, counts: &ExactDesign) -> Result<ValidationRecord> {
    let dims = setup.dims.with_locations(counts.total())?;
    let vc = &setup.variance;
    let gc = &setup.covariance;
    let adj = crate::model::adjusted_covariance(gc, vc, &dims)?;
    let mm = oracle::assemble(counts, vc, gc, &dims)?;
    let henderson = oracle::henderson_mse(&mm)?;
    let closed = mse_genotype_effects(&ApproximateDesign::from_exact(counts)?, &adj, gc, vc, &dims)?;
    let rel = linalg::relative_frobenius(&henderson, &closed);
    let settings = &sc.validation;
    let mut passed = rel <= settings.henderson_tol;
    let (mut fraction, mut max_z) = (None, None);
    if settings.replications > 0 {
        let emp = oracle::simulate_empirical_mse(&mm, vc, gc, &settings.simulation())?;
        let f = emp.fraction_within(&closed, settings.z_bound);
        let z = emp.z_scores(&closed).into_iter().fold(0.0f64, f64::max);
        passed &= f >= settings.min_fraction;
        fraction = Some(f);
        max_z = Some(z);
    }
    Ok(ValidationRecord {
        henderson_relative_error: rel,
        replications: settings.replications,
        fraction_within: fraction,
        max_z,
        passed,
    })
}
