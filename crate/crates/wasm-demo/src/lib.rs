//! Browser bindings for the maize allocation demo.
//!
//! Every export takes plain numbers and strings and returns a JSON string;
//! the JSON-producing functions are ordinary Rust and are tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use metalloc::criteria::optimality_condition;
use metalloc::dataset::{self, MaizeStructure};
use metalloc::equal_efficiency::subregion_variances;
use metalloc::{
    efficient_rounding, exact_equal_efficiency, optimize, solve_equal_efficiency, AdjustedCovariance, Criterion,
    EqualEfficiencyConfig, SolverConfig,
};

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct DesignView {
    weights: Vec<f64>,
    counts: Vec<usize>,
    criterion_value: f64,
    relative_violation: f64,
    variances: Vec<f64>,
}

#[derive(Serialize)]
struct PathPoint {
    sigma2: f64,
    weights: Vec<f64>,
}

fn adjusted(structure: &str, locations: u32, sigma2: f64) -> Result<AdjustedCovariance, String> {
    let s = MaizeStructure::from_keyword(structure).ok_or_else(|| format!("unknown structure `{structure}`"))?;
    let setup = dataset::maize_setup(s, locations as usize, sigma2).map_err(|e| e.to_string())?;
    setup.adjusted().map_err(|e| e.to_string())
}

fn criterion(name: &str) -> Result<Criterion, String> {
    match name {
        "a" => Ok(Criterion::StandardA),
        "weighted-a" => Ok(Criterion::WeightedA(dataset::maize_areas())),
        other => Err(format!("unknown criterion `{other}`")),
    }
}

fn solver() -> SolverConfig {
    // a couple of restarts is plenty for five sub-regions and keeps the UI snappy
    SolverConfig {
        restarts: 2,
        ..SolverConfig::default()
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

pub fn optimal_design_json(structure: &str, crit: &str, locations: u32, sigma2: f64) -> Result<String, String> {
    let adj = adjusted(structure, locations, sigma2)?;
    let crit = criterion(crit)?;
    let opt = optimize(&adj, &crit, &solver()).map_err(|e| e.to_string())?;
    let counts = efficient_rounding(&opt.design, locations as usize).map_err(|e| e.to_string())?;
    let variances = subregion_variances(&opt.design, &adj).map_err(|e| e.to_string())?;
    to_json(&DesignView {
        weights: opt.design.weights().to_vec(),
        counts: counts.counts().to_vec(),
        criterion_value: opt.certificate.criterion_value,
        relative_violation: opt.certificate.relative_violation(),
        variances,
    })
}

pub fn equal_efficiency_json(structure: &str, locations: u32, sigma2: f64) -> Result<String, String> {
    let adj = adjusted(structure, locations, sigma2)?;
    let cfg = EqualEfficiencyConfig {
        initial: solver(),
        ..EqualEfficiencyConfig::default()
    };
    let sol = solve_equal_efficiency(&adj, &cfg).map_err(|e| e.to_string())?;
    let counts = exact_equal_efficiency(&sol, locations as usize).map_err(|e| e.to_string())?;
    let cert = optimality_condition(&sol.design, &adj, &Criterion::StandardA);
    to_json(&DesignView {
        weights: sol.design.weights().to_vec(),
        counts: counts.counts().to_vec(),
        criterion_value: cert.criterion_value,
        relative_violation: cert.relative_violation(),
        variances: sol.variances,
    })
}

pub fn weight_path_json(
    structure: &str,
    crit: &str,
    locations: u32,
    sigma2_min: f64,
    sigma2_max: f64,
    steps: u32,
) -> Result<String, String> {
    if steps < 2 || !(sigma2_min > 0.0 && sigma2_max > sigma2_min) {
        return Err("need steps >= 2 and 0 < sigma2_min < sigma2_max".into());
    }
    let crit = criterion(crit)?;
    let mut path = Vec::with_capacity(steps as usize);
    for i in 0..steps {
        let sigma2 = sigma2_min + (sigma2_max - sigma2_min) * i as f64 / (steps - 1) as f64;
        let adj = adjusted(structure, locations, sigma2)?;
        let opt = optimize(&adj, &crit, &solver()).map_err(|e| e.to_string())?;
        path.push(PathPoint {
            sigma2,
            weights: opt.design.weights().to_vec(),
        });
    }
    to_json(&path)
}

/// Optimal approximate design, its rounded exact design and certificate.
#[wasm_bindgen]
pub fn optimal_design(structure: &str, criterion: &str, locations: u32, sigma2: f64) -> Result<String, JsValue> {
    optimal_design_json(structure, criterion, locations, sigma2).map_err(|e| JsValue::from_str(&e))
}

/// Design with equal prediction variance in every sub-region.
#[wasm_bindgen]
pub fn equal_efficiency_design(structure: &str, locations: u32, sigma2: f64) -> Result<String, JsValue> {
    equal_efficiency_json(structure, locations, sigma2).map_err(|e| JsValue::from_str(&e))
}

/// Optimal weights on an evenly spaced σ² grid.
#[wasm_bindgen]
pub fn weight_path(
    structure: &str,
    criterion: &str,
    locations: u32,
    sigma2_min: f64,
    sigma2_max: f64,
    steps: u32,
) -> Result<String, JsValue> {
    weight_path_json(structure, criterion, locations, sigma2_min, sigma2_max, steps).map_err(|e| JsValue::from_str(&e))
}
