//! Scenario files.
//!
//! ```toml
//! mode = "exact"              # approx | exact | equal-eff | validate
//! criterion = "weighted-a"    # a | weighted-a
//! loads = "areas"             # or an explicit array, weighted-a only
//!
//! [model]
//! dataset = "maize-fa"        # maize-fa | maize-cs | maize-cs-published
//! genotypes = 2
//! replicates = 2
//!
//! [sweep]
//! locations = [20, 40, 100]
//! sigma2 = [50, 200, 400]
//! ```
//!
//! Instead of `dataset`, a model may give `covariance = [[..], ..]` (σ²D in
//! data units, one row per array), `covariance-csv = "file.csv"` (resolved
//! against the config's directory) or `compound-symmetry = { subregions, a, b }`,
//! together with the variance ratios `v2` (required) and `v1`, `v3`
//! (default 0). Optional tables `[solver]`, `[enumeration]`,
//! `[equal-efficiency]` and `[validation]` override the defaults.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::criteria::Criterion;
use crate::dataset::{self, MaizeStructure};
use crate::equal_efficiency::EqualEfficiencyConfig;
use crate::error::{DesignError, Result};
use crate::exact::EnumerationBudget;
use crate::model::{GenotypeCovariance, ModelSetup, ProblemDims, SubRegionLoads, VarianceComponents};
use crate::optimizer::SolverConfig;
use crate::oracle::SimulationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Approx,
    Exact,
    EqualEff,
    Validate,
}

impl Mode {
    pub fn keyword(self) -> &'static str {
        match self {
            Mode::Approx => "approx",
            Mode::Exact => "exact",
            Mode::EqualEff => "equal-eff",
            Mode::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionKind {
    A,
    WeightedA,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawLoads {
    Keyword(String),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct RawCompoundSymmetry {
    subregions: usize,
    a: f64,
    b: f64,
}

fn default_two() -> usize {
    2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct RawModel {
    dataset: Option<String>,
    covariance: Option<Vec<Vec<f64>>>,
    covariance_csv: Option<PathBuf>,
    compound_symmetry: Option<RawCompoundSymmetry>,
    v1: Option<f64>,
    v2: Option<f64>,
    v3: Option<f64>,
    #[serde(default = "default_two")]
    genotypes: usize,
    #[serde(default = "default_two")]
    replicates: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct RawSweep {
    locations: Vec<usize>,
    sigma2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EnumerationSettings {
    pub max_compositions: u64,
    /// Fail instead of falling back to rounding when the budget is exceeded.
    pub strict: bool,
}

impl Default for EnumerationSettings {
    fn default() -> Self {
        EnumerationSettings {
            max_compositions: EnumerationBudget::default().max_compositions,
            strict: false,
        }
    }
}

impl EnumerationSettings {
    pub fn budget(&self) -> EnumerationBudget {
        EnumerationBudget {
            max_compositions: self.max_compositions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ValidationSettings {
    /// Design to validate; the rounded optimum of each cell when absent.
    pub counts: Option<Vec<usize>>,
    /// Monte Carlo replications; 0 skips the simulation.
    pub replications: usize,
    pub seed: u64,
    pub fixed_means: Option<Vec<f64>>,
    /// Relative Frobenius tolerance between Henderson and closed form.
    pub henderson_tol: f64,
    pub z_bound: f64,
    /// Required share of entries within `z_bound` standard errors.
    pub min_fraction: f64,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        let sim = SimulationConfig::default();
        ValidationSettings {
            counts: None,
            replications: sim.replications,
            seed: sim.seed,
            fixed_means: None,
            henderson_tol: 1e-8,
            z_bound: 4.0,
            min_fraction: 0.99,
        }
    }
}

impl ValidationSettings {
    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            replications: self.replications,
            seed: self.seed,
            fixed_means: self.fixed_means.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct RawConfig {
    #[serde(default)]
    mode: Option<Mode>,
    #[serde(default)]
    criterion: Option<CriterionKind>,
    #[serde(default)]
    loads: Option<RawLoads>,
    model: RawModel,
    sweep: RawSweep,
    #[serde(default)]
    solver: SolverConfig,
    #[serde(default)]
    enumeration: EnumerationSettings,
    #[serde(default)]
    equal_efficiency: EqualEfficiencyConfig,
    #[serde(default)]
    validation: ValidationSettings,
}

/// Where the genotype covariance and variance ratios come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    /// Bundled maize data; `v₁, v₂, v₃` follow from σ².
    Maize(MaizeStructure),
    /// Fixed σ²D and variance ratios.
    Generic {
        covariance: GenotypeCovariance,
        v1: f64,
        v2: f64,
        v3: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub source: ModelSource,
    pub genotypes: usize,
    pub replicates: usize,
    pub criterion: Criterion,
    pub mode: Mode,
    pub locations: Vec<usize>,
    pub sigma2: Vec<f64>,
    pub solver: SolverConfig,
    pub enumeration: EnumerationSettings,
    pub equal_efficiency: EqualEfficiencyConfig,
    pub validation: ValidationSettings,
}

impl Scenario {
    /// Bundled maize scenario over the standard grid `J ∈ {20, 40, 100}`,
    /// `σ² ∈ {50, 200, 400}`.
    pub fn maize(structure: MaizeStructure, criterion: Criterion, mode: Mode) -> Self {
        Scenario {
            source: ModelSource::Maize(structure),
            genotypes: dataset::DEFAULT_GENOTYPES,
            replicates: dataset::REPLICATES,
            criterion,
            mode,
            locations: vec![20, 40, 100],
            sigma2: vec![50.0, 200.0, 400.0],
            solver: SolverConfig::default(),
            enumeration: EnumerationSettings::default(),
            equal_efficiency: EqualEfficiencyConfig::default(),
            validation: ValidationSettings::default(),
        }
    }

    pub fn subregions(&self) -> usize {
        match &self.source {
            ModelSource::Maize(_) => dataset::SUBREGIONS,
            ModelSource::Generic { covariance, .. } => covariance.subregions(),
        }
    }

    /// Model of one grid cell.
    pub fn setup(&self, locations: usize, sigma2: f64) -> Result<ModelSetup> {
        let dims = ProblemDims::new(self.subregions(), self.genotypes, locations, self.replicates)?;
        let (variance, covariance) = match &self.source {
            ModelSource::Maize(s) => (dataset::maize_variance(sigma2)?, s.covariance()?),
            ModelSource::Generic { covariance, v1, v2, v3 } => {
                (VarianceComponents::new(sigma2, *v1, *v2, *v3)?, covariance.clone())
            }
        };
        Ok(ModelSetup {
            dims,
            variance,
            covariance,
        })
    }

    /// Grid cells in report order, `J` outermost.
    pub fn cells(&self) -> Vec<(usize, f64)> {
        self.locations
            .iter()
            .flat_map(|&j| self.sigma2.iter().map(move |&s| (j, s)))
            .collect()
    }

    /// Replaces the criterion, keeping explicit loads when switching to the
    /// weighted criterion and falling back to the bundled areas.
    pub fn with_criterion(mut self, kind: CriterionKind) -> Result<Self> {
        self.criterion = match (kind, self.criterion) {
            (CriterionKind::A, _) => Criterion::StandardA,
            (CriterionKind::WeightedA, c @ Criterion::WeightedA(_)) => c,
            (CriterionKind::WeightedA, Criterion::StandardA) => match self.source {
                ModelSource::Maize(_) => Criterion::WeightedA(dataset::maize_areas()),
                _ => return Err(DesignError::config("loads", "required for weighted-a")),
            },
        };
        Ok(self)
    }

    /// Checks that every grid cell yields a valid model.
    pub fn check(&self) -> Result<()> {
        if self.locations.is_empty() {
            return Err(DesignError::config("sweep.locations", "must not be empty"));
        }
        if self.sigma2.is_empty() {
            return Err(DesignError::config("sweep.sigma2", "must not be empty"));
        }
        let p = self.subregions();
        if let Criterion::WeightedA(l) = &self.criterion {
            if l.values().len() != p {
                return Err(DesignError::config(
                    "loads",
                    format!("expected {p} values, got {}", l.values().len()),
                ));
            }
        }
        for (i, &j) in self.locations.iter().enumerate() {
            ProblemDims::new(p, self.genotypes, j, self.replicates)
                .map_err(|e| DesignError::config(format!("sweep.locations[{i}]"), e.to_string()))?;
        }
        for (i, &s) in self.sigma2.iter().enumerate() {
            self.setup(self.locations[0], s)
                .map_err(|e| DesignError::config(format!("sweep.sigma2[{i}]"), e.to_string()))?;
        }
        self.solver
            .validate()
            .map_err(|e| DesignError::config("solver", e.to_string()))?;
        if let Some(c) = &self.validation.counts {
            if c.len() != p {
                return Err(DesignError::config(
                    "validation.counts",
                    format!("expected {p} values, got {}", c.len()),
                ));
            }
        }
        Ok(())
    }
}

fn parse_error(e: serde_path_to_error::Error<toml::de::Error>) -> DesignError {
    let path = e.path().to_string();
    let inner = e.into_inner();
    DesignError::config(if path == "." { "<root>".into() } else { path }, inner.message().trim().to_string())
}

fn read_csv_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let field = "model.covariance-csv";
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DesignError::config(field, format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| DesignError::config(field, e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| DesignError::config(field, format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    rows_to_matrix(&rows, field)
}

fn rows_to_matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(DesignError::config(field, "matrix is empty"));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(DesignError::config(
                format!("{field}[{i}]"),
                format!("expected {n} columns, got {}", r.len()),
            ));
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn build_source(m: &RawModel, base: &Path) -> Result<ModelSource> {
    let given = [
        m.dataset.is_some(),
        m.covariance.is_some(),
        m.covariance_csv.is_some(),
        m.compound_symmetry.is_some(),
    ]
    .iter()
    .filter(|x| **x)
    .count();
    if given != 1 {
        return Err(DesignError::config(
            "model",
            "give exactly one of `dataset`, `covariance`, `covariance-csv`, `compound-symmetry`",
        ));
    }
    if let Some(name) = &m.dataset {
        let s = MaizeStructure::from_keyword(name).ok_or_else(|| {
            DesignError::config(
                "model.dataset",
                format!("unknown dataset `{name}` (expected maize-fa, maize-cs or maize-cs-published)"),
            )
        })?;
        for (key, v) in [("v1", m.v1), ("v2", m.v2), ("v3", m.v3)] {
            if v.is_some() {
                return Err(DesignError::config(
                    format!("model.{key}"),
                    "derived from sigma2 for bundled datasets; remove it",
                ));
            }
        }
        return Ok(ModelSource::Maize(s));
    }

    let covariance = if let Some(cs) = &m.compound_symmetry {
        GenotypeCovariance::compound_symmetry(cs.subregions, cs.a, cs.b)
            .map_err(|e| DesignError::config("model.compound-symmetry", e.to_string()))?
    } else {
        let (matrix, field) = match (&m.covariance, &m.covariance_csv) {
            (Some(rows), _) => (rows_to_matrix(rows, "model.covariance")?, "model.covariance"),
            (_, Some(p)) => (read_csv_matrix(&base.join(p))?, "model.covariance-csv"),
            _ => unreachable!(),
        };
        GenotypeCovariance::general(matrix).map_err(|e| DesignError::config(field, e.to_string()))?
    };
    let v2 = m
        .v2
        .ok_or_else(|| DesignError::config("model.v2", "required unless a bundled dataset is used"))?;
    Ok(ModelSource::Generic {
        covariance,
        v1: m.v1.unwrap_or(0.0),
        v2,
        v3: m.v3.unwrap_or(0.0),
    })
}

fn build_criterion(kind: CriterionKind, loads: Option<&RawLoads>, source: &ModelSource) -> Result<Criterion> {
    match (kind, loads) {
        (CriterionKind::A, None) => Ok(Criterion::StandardA),
        (CriterionKind::A, Some(_)) => Err(DesignError::config("loads", "only used with criterion = \"weighted-a\"")),
        (CriterionKind::WeightedA, Some(RawLoads::Values(v))) => SubRegionLoads::new(v.clone())
            .map(Criterion::WeightedA)
            .map_err(|e| DesignError::config("loads", e.to_string())),
        (CriterionKind::WeightedA, Some(RawLoads::Keyword(k))) if k == "areas" => match source {
            ModelSource::Maize(_) => Ok(Criterion::WeightedA(dataset::maize_areas())),
            _ => Err(DesignError::config("loads", "`areas` needs a bundled dataset")),
        },
        (CriterionKind::WeightedA, Some(RawLoads::Keyword(k))) => {
            Err(DesignError::config("loads", format!("unknown keyword `{k}`")))
        }
        (CriterionKind::WeightedA, None) => match source {
            ModelSource::Maize(_) => Ok(Criterion::WeightedA(dataset::maize_areas())),
            _ => Err(DesignError::config("loads", "required for weighted-a")),
        },
    }
}

/// Parses a scenario from TOML text. Relative CSV paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<Scenario> {
    let de = toml::Deserializer::parse(text).map_err(|e| DesignError::config("<root>", e.to_string()))?;
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(parse_error)?;

    let source = build_source(&raw.model, base)?;
    let criterion = build_criterion(raw.criterion.unwrap_or(CriterionKind::A), raw.loads.as_ref(), &source)?;
    let scenario = Scenario {
        source,
        genotypes: raw.model.genotypes,
        replicates: raw.model.replicates,
        criterion,
        mode: raw.mode.unwrap_or(Mode::Approx),
        locations: raw.sweep.locations,
        sigma2: raw.sweep.sigma2,
        solver: raw.solver,
        enumeration: raw.enumeration,
        equal_efficiency: raw.equal_efficiency,
        validation: raw.validation,
    };
    scenario.check()?;
    Ok(scenario)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| DesignError::config("<file>", format!("{}: {e}", path.display())))?;
    parse_config(&text, path.parent().unwrap_or_else(|| Path::new(".")))
}
