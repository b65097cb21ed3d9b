//! Exact designs: efficient rounding of approximate designs and exhaustive
//! enumeration of all integer allocations.

use serde::{Deserialize, Serialize};

use crate::criteria::{Criterion, CriterionEvaluator};
use crate::error::{DesignError, Result};
use crate::model::{AdjustedCovariance, ApproximateDesign, ExactDesign};
use crate::par;

/// Designs whose criterion values differ by less than this (relative) are
/// reported as ties.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EnumerationBudget {
    pub max_compositions: u64,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget {
            max_compositions: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationResult {
    /// Lexicographically smallest minimizer.
    pub design: ExactDesign,
    pub value: f64,
    /// Every design within [`TIE_TOL`] of the minimum, in lexicographic order.
    pub ties: Vec<ExactDesign>,
    /// Number of compositions evaluated.
    pub visited: u64,
}

/// Efficient rounding of `design` to `total` locations.
///
/// Starts from `⌈(J − s/2)·wᵢ⌉` on the `s` support points and then adds a
/// unit where `nᵢ/wᵢ` is smallest, or removes one where `(nᵢ−1)/wᵢ` is
/// largest, until the counts sum to `J`. Ties go to the lowest index.
pub fn efficient_rounding(design: &ApproximateDesign, total: usize) -> Result<ExactDesign> {
    let w = design.weights();
    let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    let s = support.len();
    if total < s {
        return Err(DesignError::TooFewLocations { total, support: s });
    }
    let scale = total as f64 - s as f64 / 2.0;
    let mut counts = vec![0usize; w.len()];
    for &i in &support {
        let x = scale * w[i];
        counts[i] = (x - 1e-12 * x.max(1.0)).ceil().max(0.0) as usize;
    }
    let mut sum: usize = counts.iter().sum();
    while sum < total {
        let j = pick(&support, |i| counts[i] as f64 / w[i], |a, b| a < b);
        counts[j] += 1;
        sum += 1;
    }
    while sum > total {
        let candidates: Vec<usize> = support.iter().copied().filter(|&i| counts[i] > 0).collect();
        let k = pick(&candidates, |i| (counts[i] as f64 - 1.0) / w[i], |a, b| a > b);
        counts[k] -= 1;
        sum -= 1;
    }
    ExactDesign::new(counts)
}

/// First index in `idx` whose key is strictly better than all earlier ones.
fn pick(idx: &[usize], key: impl Fn(usize) -> f64, better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = idx[0];
    let mut best_key = key(best);
    for &i in &idx[1..] {
        let k = key(i);
        if better(k, best_key) {
            best = i;
            best_key = k;
        }
    }
    best
}

/// `C(total + parts − 1, parts − 1)`, the number of compositions of `total`
/// into `parts` non-negative parts.
pub fn composition_count(total: usize, parts: usize) -> u128 {
    if parts == 0 {
        return u128::from(total == 0);
    }
    let n = (total + parts - 1) as u128;
    let k = (parts - 1).min(total) as u128;
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) / (i + 1);
    }
    c
}

/// Advances `n` to the next composition of the same sum in lexicographic
/// order. Returns `false` after the last one.
fn next_composition(n: &mut [usize]) -> bool {
    let last = n.len() - 1;
    let mut suffix = n[last];
    for i in (0..last).rev() {
        if suffix > 0 {
            n[i] += 1;
            for x in n[i + 1..last].iter_mut() {
                *x = 0;
            }
            n[last] = suffix - 1;
            return true;
        }
        suffix += n[i];
    }
    false
}

struct Partial {
    value: f64,
    candidates: Vec<(f64, Vec<usize>)>,
    visited: u64,
}

fn scan_partition(eval: &mut CriterionEvaluator, p: usize, total: usize, first: usize) -> Partial {
    let t = total as f64;
    let mut counts = vec![0usize; p];
    counts[0] = first;
    counts[p - 1] += total - first;
    let mut best = f64::INFINITY;
    let mut candidates: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut visited = 0u64;
    loop {
        let v = eval.value_counts(&counts, t);
        visited += 1;
        if v <= best * (1.0 + TIE_TOL) {
            if v < best {
                best = v;
                candidates.retain(|(cv, _)| *cv <= best * (1.0 + TIE_TOL));
            }
            candidates.push((v, counts.clone()));
        }
        if p == 1 || !next_composition(&mut counts[1..]) {
            break;
        }
    }
    Partial {
        value: best,
        candidates,
        visited,
    }
}

/// Exhaustive search over all allocations of `total` locations.
pub fn enumerate_optimal(
    adj: &AdjustedCovariance,
    crit: &Criterion,
    total: usize,
    budget: &EnumerationBudget,
) -> Result<EnumerationResult> {
    let p = adj.subregions();
    if total == 0 {
        return Err(DesignError::invalid("locations", "must be at least 1"));
    }
    let required = composition_count(total, p);
    if required > budget.max_compositions as u128 {
        return Err(DesignError::BudgetExceeded {
            required,
            budget: budget.max_compositions,
        });
    }

    let firsts: Vec<usize> = if p == 1 { vec![total] } else { (0..=total).collect() };
    let partials = par::map(firsts, |first| {
        let mut eval = CriterionEvaluator::new(adj, crit);
        scan_partition(&mut eval, p, total, first)
    });

    let best = partials.iter().map(|x| x.value).fold(f64::INFINITY, f64::min);
    let visited = partials.iter().map(|x| x.visited).sum();
    // partitions are already in lexicographic order
    let ties: Vec<ExactDesign> = partials
        .into_iter()
        .flat_map(|x| x.candidates)
        .filter(|(v, _)| *v <= best * (1.0 + TIE_TOL))
        .map(|(_, c)| ExactDesign::new(c))
        .collect::<Result<_>>()?;
    let design = ties[0].clone();
    Ok(EnumerationResult {
        design,
        value: best,
        ties,
        visited,
    })
}
