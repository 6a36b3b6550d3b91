//! Reproducible posterior-consistency sweeps: simulate a known SEM across
//! noise families, sample sizes and seeds, compute the exact posterior over
//! all DAGs for each cell, and aggregate how much mass the true graph
//! collects. The whole grid is deterministic given the master seed; per-cell
//! seeds are mixed from (master seed, family, n, seed index) so grids can be
//! extended without perturbing existing cells.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_json;
use crate::population::population_score_gap;
use crate::scoring::{posterior_over_dags, DagPrior};
use crate::sem::{mix_seed, ErrorFamily, SemSpec};

/// How the g-prior scale is chosen per cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GPolicy {
    /// `g = n`, the scale under which the posterior concentrates on the truth.
    SampleSize,
    Fixed(f64),
}

impl GPolicy {
    pub fn resolve(&self, n: usize) -> f64 {
        match self {
            GPolicy::SampleSize => n as f64,
            GPolicy::Fixed(g) => *g,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let GPolicy::Fixed(g) = self {
            if !(*g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "fixed g must be positive and finite, got {g}"
                )));
            }
        }
        Ok(())
    }
}

impl Serialize for GPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            GPolicy::SampleSize => s.serialize_str("n"),
            GPolicy::Fixed(g) => s.serialize_f64(*g),
        }
    }
}

impl<'de> Deserialize<'de> for GPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Value(f64),
        }
        match Repr::deserialize(d)? {
            Repr::Name(s) if s == "n" => Ok(GPolicy::SampleSize),
            Repr::Name(s) => Err(D::Error::custom(format!("unknown g policy `{s}`"))),
            Repr::Value(g) => {
                let policy = GPolicy::Fixed(g);
                policy.validate().map_err(D::Error::custom)?;
                Ok(policy)
            }
        }
    }
}

impl std::str::FromStr for GPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("n") {
            return Ok(GPolicy::SampleSize);
        }
        let g: f64 = s.parse().map_err(|_| {
            Error::InvalidInput(format!("bad g value `{s}` (expected `n` or a number)"))
        })?;
        let policy = GPolicy::Fixed(g);
        policy.validate()?;
        Ok(policy)
    }
}

fn default_workers() -> usize {
    4
}

fn default_cap() -> usize {
    crate::graph::DEFAULT_ENUMERATION_CAP
}

/// Full description of one sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: SemSpec,
    pub families: Vec<ErrorFamily>,
    pub n_grid: Vec<usize>,
    pub seeds: u32,
    pub master_seed: u64,
    pub g: GPolicy,
    pub prior: DagPrior,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::InvalidInput(
                "at least one error family is required".into(),
            ));
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "n_grid must be non-empty and strictly increasing".into(),
            ));
        }
        if self.seeds == 0 {
            return Err(Error::InvalidInput("at least one seed is required".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidInput(
                "at least one worker is required".into(),
            ));
        }
        if self.spec.node_count() > self.cap {
            return Err(Error::ResourceCap(format!(
                "posterior sweeps enumerate all DAGs; p = {} exceeds the cap {}",
                self.spec.node_count(),
                self.cap
            )));
        }
        self.g.validate()?;
        self.prior.validate()
    }
}

/// One simulated cell: posterior mass of the true graph, whether the MAP
/// estimate equals it, and its posterior rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub family: ErrorFamily,
    pub n: usize,
    pub seed: u32,
    pub posterior_true: f64,
    pub map_correct: bool,
    pub rank_true: usize,
}

/// Per-(family, n) aggregate, plus the computable reference decay term
/// `exp(-(n p / 2) gap) (1 + n)^{edges / 2}` evaluated at the population gap
/// (stored in log form as well, since the exponential underflows quickly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub family: ErrorFamily,
    pub n: usize,
    pub mean_posterior_true: f64,
    pub median_posterior_true: f64,
    pub map_rate: f64,
    pub log_bound_term: Option<f64>,
    pub bound_term: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub master_seed: u64,
    pub g: GPolicy,
    pub prior: DagPrior,
    pub spec: SemSpec,
    /// Population log-score gap of the spec; `None` for an empty true graph.
    pub delta_star: Option<f64>,
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
    /// Unix seconds; excluded from determinism comparisons.
    pub generated_at: u64,
}

pub const RUNS_CSV_HEADER: &str = "family,n,seed,posterior_true,map_correct,rank_true";

impl ConsistencyReport {
    /// JSON with the timestamp zeroed, for byte-level comparisons.
    pub fn canonical_json(&self) -> String {
        let mut clone = self.clone();
        clone.generated_at = 0;
        let mut text = serde_json::to_string_pretty(&clone).expect("report serializes");
        text.push('\n');
        text
    }

    /// Flat per-run CSV.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from(RUNS_CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.family.name(),
                row.n,
                row.seed,
                row.posterior_true,
                row.map_correct,
                row.rank_true
            ));
        }
        out
    }

    /// Writes `report.json` and `runs.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), self)?;
        std::fs::write(dir.join("runs.csv"), self.runs_csv())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    family_idx: usize,
    n: usize,
    seed: u32,
}

/// Runs the whole grid on a bounded worker pool. Results are assembled in a
/// fixed (family, n, seed) order regardless of scheduling, so reports are
/// byte-identical across runs and thread counts. If any cell fails and
/// `out_dir` is given, completed rows and a manifest naming them are flushed
/// before the error is returned.
pub fn run_consistency_experiment(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ConsistencyReport> {
    config.validate()?;
    let spec = &config.spec;
    let truth = spec.graph().clone();

    let delta_star = match population_score_gap(spec, config.cap) {
        Ok(gap) => Some(gap),
        Err(Error::GapUndefined) => None,
        Err(other) => return Err(other),
    };

    let mut cells = Vec::new();
    for (family_idx, _) in config.families.iter().enumerate() {
        for &n in &config.n_grid {
            for seed in 0..config.seeds {
                cells.push(Cell {
                    family_idx,
                    n,
                    seed,
                });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<RunRow>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(config, &truth, *cell))
            .collect()
    });

    let mut rows = Vec::with_capacity(outcomes.len());
    let mut failure: Option<Error> = None;
    for outcome in outcomes {
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) if failure.is_none() => failure = Some(e),
            Err(_) => {}
        }
    }

    if let Some(error) = failure {
        if let Some(dir) = out_dir {
            flush_partial(dir, &rows, &error)?;
        }
        return Err(error);
    }

    let aggregates = aggregate(config, &rows, delta_star);
    let report = ConsistencyReport {
        master_seed: config.master_seed,
        g: config.g,
        prior: config.prior,
        spec: spec.clone(),
        delta_star,
        rows,
        aggregates,
        generated_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    if let Some(dir) = out_dir {
        report.write(dir)?;
    }
    Ok(report)
}

fn run_cell(config: &ExperimentConfig, truth: &crate::graph::Dag, cell: Cell) -> Result<RunRow> {
    let family = config.families[cell.family_idx];
    let data_seed = mix_seed(&[
        config.master_seed,
        cell.family_idx as u64,
        cell.n as u64,
        cell.seed as u64,
    ]);
    let data = config
        .spec
        .clone()
        .with_family(family)
        .simulate(cell.n, data_seed)?;
    let g = config.g.resolve(cell.n);
    let posterior = posterior_over_dags(&data, config.prior, g, config.cap)?;
    let posterior_true = posterior
        .posterior_of(truth)
        .expect("the true graph is enumerated");
    let rank_true = posterior
        .rank_of(truth)
        .expect("the true graph is enumerated");
    let map_correct = posterior.map_dags().first() == Some(truth);
    Ok(RunRow {
        family,
        n: cell.n,
        seed: cell.seed,
        posterior_true,
        map_correct,
        rank_true,
    })
}

fn aggregate(
    config: &ExperimentConfig,
    rows: &[RunRow],
    delta_star: Option<f64>,
) -> Vec<AggregateRow> {
    let p = config.spec.node_count() as f64;
    let edges = config.spec.graph().edge_count() as f64;
    let mut out = Vec::new();
    for &family in &config.families {
        for &n in &config.n_grid {
            let cell_rows: Vec<&RunRow> = rows
                .iter()
                .filter(|r| r.family == family && r.n == n)
                .collect();
            if cell_rows.is_empty() {
                continue;
            }
            let mut posteriors: Vec<f64> = cell_rows.iter().map(|r| r.posterior_true).collect();
            let count = posteriors.len();
            let mean = posteriors.iter().sum::<f64>() / count as f64;
            posteriors.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = if count % 2 == 1 {
                posteriors[count / 2]
            } else {
                0.5 * (posteriors[count / 2 - 1] + posteriors[count / 2])
            };
            let map_rate = cell_rows.iter().filter(|r| r.map_correct).count() as f64 / count as f64;
            let log_bound_term = delta_star
                .map(|gap| -(n as f64 * p / 2.0) * gap + (edges / 2.0) * (1.0 + n as f64).ln());
            out.push(AggregateRow {
                family,
                n,
                mean_posterior_true: mean,
                median_posterior_true: median,
                map_rate,
                log_bound_term,
                bound_term: log_bound_term.map(f64::exp),
            });
        }
    }
    out
}

fn flush_partial(dir: &Path, rows: &[RunRow], error: &Error) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from(RUNS_CSV_HEADER);
    csv.push('\n');
    for row in rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.family.name(),
            row.n,
            row.seed,
            row.posterior_true,
            row.map_correct,
            row.rank_true
        ));
    }
    std::fs::write(dir.join("runs.csv"), csv)?;
    let manifest = serde_json::json!({
        "completed": rows
            .iter()
            .map(|r| serde_json::json!({"family": r.family, "n": r.n, "seed": r.seed}))
            .collect::<Vec<_>>(),
        "error": error.to_string(),
    });
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(())
}
