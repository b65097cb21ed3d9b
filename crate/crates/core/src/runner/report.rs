//! Report records and their two renderings: JSON Lines and an aligned table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::criteria::DesignCertificate;
use crate::error::{DesignError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CertificateRecord {
    pub lhs: f64,
    pub rhs: Vec<f64>,
    pub max_violation: f64,
}

impl From<&DesignCertificate> for CertificateRecord {
    fn from(c: &DesignCertificate) -> Self {
        CertificateRecord {
            lhs: c.lhs,
            rhs: c.rhs.clone(),
            max_violation: c.max_violation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExactRecord {
    /// `enumeration` or `rounding`.
    pub method: String,
    pub value: f64,
    /// `Φ(exact)/Φ(approximate) − 1`, an upper bound on the loss against
    /// the best exact design.
    pub optimality_gap: f64,
    /// All tied optima when enumeration found more than one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ties: Vec<Vec<usize>>,
    pub rounded: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EqualEfficiencyRecord {
    pub converged: bool,
    pub relative_residual: f64,
    pub variances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValidationRecord {
    pub henderson_relative_error: f64,
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction_within: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_z: Option<f64>,
    pub passed: bool,
}

/// One grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CellRecord {
    #[serde(rename = "J")]
    pub j: usize,
    pub sigma2: f64,
    pub mode: String,
    pub criterion: String,
    pub weights: Vec<f64>,
    pub counts: Vec<usize>,
    pub criterion_value: f64,
    pub certificate: CertificateRecord,
    pub solver_iterations: usize,
    pub wall_time_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<ExactRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equal_efficiency: Option<EqualEfficiencyRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub records: Vec<CellRecord>,
}

impl Report {
    /// One JSON object per line.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_records(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| DesignError::invalid(format!("record {}", i + 1), e.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(Report { records })
    }

    /// Aligned plain-text table, one row per cell, grouped by `J`.
    pub fn to_table(&self) -> String {
        let Some(first) = self.records.first() else {
            return String::from("(empty report)\n");
        };
        let p = first.weights.len();
        let decimals = if first.mode == "equal-eff" { 3 } else { 2 };
        let wide = decimals + 3;
        let mut out = String::new();
        let _ = writeln!(out, "mode: {}   criterion: {}", first.mode, first.criterion);

        let mut header = format!("{:>5} {:>8} |", "J", "sigma2");
        for i in 1..=p {
            let _ = write!(header, " {:>w$}", format!("w{i}"), w = wide);
        }
        header.push_str(" |");
        for i in 1..=p {
            let _ = write!(header, " {:>4}", format!("J{i}"));
        }
        let _ = write!(header, " | {:>12} {:>10}", "criterion", "violation");
        let rule = "-".repeat(header.chars().count());
        let _ = writeln!(out, "{header}\n{rule}");

        let mut notes = Vec::new();
        let mut last_j = None;
        for r in &self.records {
            let j = if last_j == Some(r.j) {
                String::new()
            } else {
                if last_j.is_some() {
                    let _ = writeln!(out, "{rule}");
                }
                r.j.to_string()
            };
            last_j = Some(r.j);
            let _ = write!(out, "{:>5} {:>8} |", j, format_number(r.sigma2));
            for w in &r.weights {
                let _ = write!(out, " {:>w$.d$}", w, w = wide, d = decimals);
            }
            out.push_str(" |");
            for c in &r.counts {
                let _ = write!(out, " {c:>4}");
            }
            let rel = r.certificate.max_violation / r.certificate.lhs;
            let _ = writeln!(out, " | {:>12.6e} {:>10.2e}", r.criterion_value, rel);

            let cell = format!("J={}, sigma2={}", r.j, format_number(r.sigma2));
            if let Some(e) = &r.exact {
                if e.ties.len() > 1 {
                    notes.push(format!("{cell}: {} tied exact optima {:?}", e.ties.len(), e.ties));
                }
                if e.method == "rounding" {
                    notes.push(format!(
                        "{cell}: enumeration over budget, rounded design within {:.2e} of the approximate bound",
                        e.optimality_gap
                    ));
                }
            }
            if let Some(eq) = &r.equal_efficiency {
                if !eq.converged {
                    notes.push(format!("{cell}: equal-efficiency system did not converge"));
                }
            }
            if let Some(v) = &r.validation {
                let mc = match (v.fraction_within, v.max_z) {
                    (Some(f), Some(z)) => format!(", {} replications, {:.1}% within bound, max z {:.2}", v.replications, 100.0 * f, z),
                    _ => String::new(),
                };
                notes.push(format!(
                    "{cell}: validation {} (Henderson vs closed form {:.2e}{mc})",
                    if v.passed { "passed" } else { "FAILED" },
                    v.henderson_relative_error
                ));
            }
        }
        if !notes.is_empty() {
            out.push('\n');
            for n in notes {
                let _ = writeln!(out, "{n}");
            }
        }
        out
    }
}

fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}
