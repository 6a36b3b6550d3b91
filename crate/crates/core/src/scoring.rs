//! Empirical scores from data: node-wise least-squares residuals, the
//! closed-form log marginal likelihood of the Gaussian working model under
//! independent g-priors, an independent dense-solve form of the same marginal
//! used as a numerical oracle, the BIC-type score, Bayes factors, and exact
//! posteriors over all DAGs.
//!
//! Everything runs in log space; the common proportionality constant of the
//! marginal likelihood is fixed to zero, so differences of log scores are
//! exact log Bayes factors.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{enumerate_dags_with_cap, Dag};
use crate::sem::Dataset;

/// Relative rank-deficiency threshold on the QR diagonal.
const COLLINEARITY_REL_TOL: f64 = 1e-10;

/// The dense oracle solves one n x n system per node; refuse sizes where that
/// stops being a desk-scale computation.
const DIRECT_FORM_MAX_N: usize = 2048;

pub(crate) fn mask_of(parents: &[usize]) -> u64 {
    parents.iter().fold(0u64, |m, &k| m | (1 << k))
}

pub(crate) fn parents_of_mask(mask: u64, p: usize) -> Vec<usize> {
    (0..p).filter(|&k| mask & (1 << k) != 0).collect()
}

/// Mean squared residual of regressing column `j` on the given columns,
/// computed through a QR factorization of the regressor block (the normal
/// equations are never formed). An empty parent set yields the column's
/// uncentered second moment.
pub fn node_rss(data: &Dataset, j: usize, parents: &[usize]) -> Result<f64> {
    let n = data.n();
    let p = data.p();
    if j >= p || parents.iter().any(|&k| k >= p) {
        return Err(Error::InvalidInput(format!(
            "node {j} / parents {parents:?} out of range for p = {p}"
        )));
    }
    if parents.contains(&j) {
        return Err(Error::InvalidInput(format!(
            "node {j} cannot regress on itself"
        )));
    }
    let x = data.column(j);
    if parents.is_empty() {
        return Ok(x.norm_squared() / n as f64);
    }
    if n <= parents.len() {
        return Err(Error::InsufficientSample {
            n,
            k: parents.len(),
        });
    }
    let block = data.columns(parents);
    let qr = block.qr();
    check_full_rank(qr.r(), j, parents)?;
    let q = qr.q();
    let fitted = &q * (q.transpose() * &x);
    Ok((x - fitted).norm_squared() / n as f64)
}

fn check_full_rank(r: DMatrix<f64>, node: usize, parents: &[usize]) -> Result<()> {
    let diag: Vec<f64> = (0..r.ncols()).map(|i| r[(i, i)].abs()).collect();
    let largest = diag.iter().fold(0.0f64, |a, &b| a.max(b));
    if largest == 0.0 || diag.iter().any(|&d| d < COLLINEARITY_REL_TOL * largest) {
        return Err(Error::CollinearData {
            node,
            parents: parents.to_vec(),
        });
    }
    Ok(())
}

/// Sum of uncentered second moments of all columns.
pub fn total_second_moment(data: &Dataset) -> f64 {
    data.values().norm_squared() / data.n() as f64
}

/// Cache of node-wise residuals keyed by `(node, parent-set bitmask)`,
/// populated once for every parent set up to `max_parents` and frozen. Each
/// distinct regression is performed exactly once no matter how many DAGs
/// share it.
#[derive(Debug, Clone)]
pub struct NodeScoreTable {
    n: usize,
    p: usize,
    max_parents: usize,
    v_n: f64,
    scores: HashMap<(usize, u64), f64>,
}

impl NodeScoreTable {
    /// Scores every `(node, parent set)` pair with at most `max_parents`
    /// parents, in parallel.
    pub fn build(data: &Dataset, max_parents: usize) -> Result<Self> {
        let p = data.p();
        if p > 63 {
            return Err(Error::ResourceCap(format!(
                "bitmask score table supports at most 63 variables, got {p}"
            )));
        }
        let max_parents = max_parents.min(p - 1);
        let mut jobs: Vec<(usize, u64)> = Vec::new();
        for j in 0..p {
            for mask in 0u64..(1 << p) {
                if mask & (1 << j) == 0 && (mask.count_ones() as usize) <= max_parents {
                    jobs.push((j, mask));
                }
            }
        }
        let scored: Vec<((usize, u64), f64)> = jobs
            .into_par_iter()
            .map(|(j, mask)| {
                let parents = parents_of_mask(mask, p);
                node_rss(data, j, &parents).map(|r| ((j, mask), r))
            })
            .collect::<Result<_>>()?;
        let scores: HashMap<(usize, u64), f64> = scored.into_iter().collect();
        let v_n = (0..p).map(|j| scores[&(j, 0)]).sum();
        Ok(NodeScoreTable {
            n: data.n(),
            p,
            max_parents,
            v_n,
            scores,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn max_parents(&self) -> usize {
        self.max_parents
    }

    /// Total second moment of the data the table was built from; identical to
    /// the sum of the empty-parent-set entries.
    pub fn total_second_moment(&self) -> f64 {
        self.v_n
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, j: usize, parents: &[usize]) -> Result<f64> {
        self.get_mask(j, mask_of(parents))
    }

    pub fn get_mask(&self, j: usize, mask: u64) -> Result<f64> {
        self.scores
            .get(&(j, mask))
            .copied()
            .ok_or_else(|| Error::IncompleteTable {
                node: j,
                parents: parents_of_mask(mask, self.p),
            })
    }

    /// Sum of per-node residuals under the parent sets of `dag`.
    pub fn rss_total(&self, dag: &Dag) -> Result<f64> {
        if dag.node_count() != self.p {
            return Err(Error::InvalidInput(format!(
                "graph has {} nodes but table covers {}",
                dag.node_count(),
                self.p
            )));
        }
        (0..self.p).map(|j| self.get(j, dag.parents(j))).sum()
    }
}

/// All scores of one DAG against one dataset, tagged with the settings they
/// were computed under so scores from different runs cannot be mixed up.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DagScore {
    pub log_marginal: f64,
    pub bic: f64,
    pub rss_total: f64,
    pub edge_count: usize,
    pub g: f64,
    pub n: usize,
    pub p: usize,
}

fn check_g(g: f64) -> Result<()> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "g must be positive and finite, got {g}"
        )));
    }
    Ok(())
}

/// Log marginal likelihood of `dag` up to the shared constant:
/// `-(np/2) ln(V + g R) + ((np - edges)/2) ln(1 + g)`.
pub fn log_marginal(table: &NodeScoreTable, dag: &Dag, g: f64) -> Result<f64> {
    check_g(g)?;
    let rss = table.rss_total(dag)?;
    let v_n = table.total_second_moment();
    let evidence_arg = v_n + g * rss;
    if evidence_arg <= 0.0 {
        return Err(Error::DegenerateCovariance(
            "total second moment is zero; the marginal likelihood is undefined".into(),
        ));
    }
    let np = (table.n() * table.p()) as f64;
    let edges = dag.edge_count() as f64;
    Ok(-(np / 2.0) * evidence_arg.ln() + (np - edges) / 2.0 * (1.0 + g).ln())
}

/// Scores one DAG fully (marginal likelihood and BIC).
pub fn score_dag(table: &NodeScoreTable, dag: &Dag, g: f64) -> Result<DagScore> {
    Ok(DagScore {
        log_marginal: log_marginal(table, dag, g)?,
        bic: bic_score(table, dag)?,
        rss_total: table.rss_total(dag)?,
        edge_count: dag.edge_count(),
        g,
        n: table.n(),
        p: table.p(),
    })
}

/// Quadratic form `x^T (gP + I)^{-1} x` and `ln det(gP + I)` for the
/// projector `P` onto the span of the parent columns, both obtained from one
/// dense LU factorization. This is the pre-simplification route: no use is
/// made of the closed-form inverse or determinant of `gP + I`.
pub(crate) fn projector_quad_and_logdet(
    data: &Dataset,
    j: usize,
    parents: &[usize],
    g: f64,
) -> Result<(f64, f64)> {
    let n = data.n();
    let x = data.column(j);
    if parents.is_empty() {
        return Ok((x.norm_squared(), 0.0));
    }
    if n <= parents.len() {
        return Err(Error::InsufficientSample {
            n,
            k: parents.len(),
        });
    }
    let block = data.columns(parents);
    let qr = block.qr();
    check_full_rank(qr.r(), j, parents)?;
    let q = qr.q();
    let projector = &q * q.transpose();
    let shifted = projector * g + DMatrix::identity(n, n);
    let lu = shifted.lu();
    let det = lu.determinant();
    let solved = lu
        .solve(&x)
        .ok_or_else(|| Error::DegenerateCovariance("gP + I unexpectedly singular".into()))?;
    Ok((x.dot(&solved), det.ln()))
}

/// Independent evaluation of the log marginal likelihood straight from its
/// integral form: per node, solve `(gP + I) y = x` densely and take the
/// determinant from the same LU factorization, then apply the bookkeeping
/// that aligns the constant with [`log_marginal`]. Dense in `n`, so only
/// suitable for small samples; exists as a cross-check on the closed form.
pub fn log_marginal_direct(data: &Dataset, dag: &Dag, g: f64) -> Result<f64> {
    check_g(g)?;
    let n = data.n();
    let p = data.p();
    if dag.node_count() != p {
        return Err(Error::InvalidInput(format!(
            "graph has {} nodes but data has {p} columns",
            dag.node_count()
        )));
    }
    if n > DIRECT_FORM_MAX_N {
        return Err(Error::ResourceCap(format!(
            "direct marginal form solves n x n systems; n = {n} exceeds {DIRECT_FORM_MAX_N}"
        )));
    }
    let mut quad_sum = 0.0;
    let mut logdet_sum = 0.0;
    for j in 0..p {
        let (quad, logdet) = projector_quad_and_logdet(data, j, dag.parents(j), g)?;
        quad_sum += quad;
        logdet_sum += logdet;
    }
    if quad_sum <= 0.0 {
        return Err(Error::DegenerateCovariance(
            "total quadratic form is zero; the marginal likelihood is undefined".into(),
        ));
    }
    let np = (n * p) as f64;
    Ok(-(np / 2.0) * quad_sum.ln() - 0.5 * logdet_sum + (np / 2.0) * (n as f64).ln())
}

/// `n R + edges ln(n)`; lower is better. Decomposes node-wise, which is what
/// makes exact subset dynamic programming possible.
pub fn bic_score(table: &NodeScoreTable, dag: &Dag) -> Result<f64> {
    let n = table.n() as f64;
    Ok(n * table.rss_total(dag)? + dag.edge_count() as f64 * n.ln())
}

/// Per-node BIC contribution, used by the DP search.
pub(crate) fn bic_node_term(table: &NodeScoreTable, j: usize, mask: u64) -> Result<f64> {
    let n = table.n() as f64;
    Ok(n * table.get_mask(j, mask)? + mask.count_ones() as f64 * n.ln())
}

/// Log Bayes factor of the first DAG over the second. Both scores must come
/// from the same data and the same `g`.
pub fn log_bayes_factor(a: &DagScore, b: &DagScore) -> Result<f64> {
    if a.n != b.n || a.p != b.p || a.g != b.g {
        return Err(Error::IncompatibleScores(format!(
            "(n, p, g) = ({}, {}, {}) vs ({}, {}, {})",
            a.n, a.p, a.g, b.n, b.p, b.g
        )));
    }
    Ok(a.log_marginal - b.log_marginal)
}

/// Strictly positive prior over DAGs, known up to normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DagPrior {
    /// Every DAG equally likely.
    Uniform,
    /// Mass proportional to `q^edges`; `q < 1` favors sparsity.
    #[serde(rename = "edge")]
    Edge(f64),
}

impl DagPrior {
    pub fn validate(&self) -> Result<()> {
        if let DagPrior::Edge(q) = self {
            if !(*q > 0.0 && q.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "edge prior weight must be positive and finite, got {q}"
                )));
            }
        }
        Ok(())
    }

    pub fn log_prior(&self, edge_count: usize) -> f64 {
        match self {
            DagPrior::Uniform => 0.0,
            DagPrior::Edge(q) => edge_count as f64 * q.ln(),
        }
    }
}

impl std::str::FromStr for DagPrior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("uniform") {
            return Ok(DagPrior::Uniform);
        }
        if let Some(q) = s.strip_prefix("edge:") {
            let q: f64 = q
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad edge prior weight `{q}`")))?;
            let prior = DagPrior::Edge(q);
            prior.validate()?;
            return Ok(prior);
        }
        Err(Error::InvalidInput(format!(
            "unknown prior `{s}` (expected `uniform` or `edge:q`)"
        )))
    }
}

/// One DAG's entry in a normalized posterior, with the DAG stored as its
/// canonical adjacency mask (enumeration is capped well below 8 nodes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorEntry {
    pub mask: u64,
    pub log_marginal: f64,
    pub log_prior: f64,
    pub posterior: f64,
}

/// Exact posterior over every DAG, ranked by posterior mass (canonical-mask
/// tie-break).
#[derive(Debug, Clone)]
pub struct PosteriorResult {
    pub g: f64,
    pub prior: DagPrior,
    pub n: usize,
    pub p: usize,
    entries: Vec<PosteriorEntry>,
    map_masks: Vec<u64>,
}

/// Slack, scaled by the score magnitude, under which two log scores are
/// treated as tied; shared by MAP sets and the search argmin sets. Genuine
/// runner-up gaps carry at least half a log-penalty quantum, far above this.
pub(crate) fn scores_tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().min(b.abs()))
}

impl PosteriorResult {
    pub fn entries(&self) -> &[PosteriorEntry] {
        &self.entries
    }

    /// MAP DAGs in canonical order (usually a single graph).
    pub fn map_dags(&self) -> Vec<Dag> {
        self.map_masks
            .iter()
            .map(|&m| dag_from_mask(self.p, m))
            .collect()
    }

    pub fn dag_of(&self, entry: &PosteriorEntry) -> Dag {
        dag_from_mask(self.p, entry.mask)
    }

    pub fn posterior_of(&self, dag: &Dag) -> Option<f64> {
        let mask = dag.canonical_mask();
        self.entries
            .iter()
            .find(|e| e.mask == mask)
            .map(|e| e.posterior)
    }

    /// 1-based rank of `dag`: one plus the number of DAGs with strictly
    /// larger posterior (beyond the tie tolerance).
    pub fn rank_of(&self, dag: &Dag) -> Option<usize> {
        let mask = dag.canonical_mask();
        let target = self.entries.iter().find(|e| e.mask == mask)?;
        let target_score = target.log_marginal + target.log_prior;
        let better = self
            .entries
            .iter()
            .filter(|e| {
                let s = e.log_marginal + e.log_prior;
                s > target_score && !scores_tied(s, target_score)
            })
            .count();
        Some(1 + better)
    }

    /// JSON per the report schema, optionally truncated to the top `k` DAGs.
    pub fn to_json(&self, top_k: Option<usize>) -> serde_json::Value {
        let take = top_k.unwrap_or(self.entries.len()).min(self.entries.len());
        let dags: Vec<serde_json::Value> = self.entries[..take]
            .iter()
            .map(|e| {
                serde_json::json!({
                    "edges": dag_from_mask(self.p, e.mask).edges(),
                    "log_marginal": e.log_marginal,
                    "log_prior": e.log_prior,
                    "posterior": e.posterior,
                })
            })
            .collect();
        serde_json::json!({
            "g": self.g,
            "prior": self.prior,
            "n": self.n,
            "p": self.p,
            "dags": dags,
            "map": self.map_dags(),
        })
    }
}

fn dag_from_mask(p: usize, mask: u64) -> Dag {
    Dag::from_canonical_mask(p, mask).expect("stored mask is a valid DAG")
}

/// Scores every DAG on the dataset's variables and normalizes with
/// log-sum-exp. The score table is built once; each distinct regression runs
/// exactly once across all DAGs.
pub fn posterior_over_dags(
    data: &Dataset,
    prior: DagPrior,
    g: f64,
    cap: usize,
) -> Result<PosteriorResult> {
    check_g(g)?;
    prior.validate()?;
    let p = data.p();
    let table = NodeScoreTable::build(data, p.saturating_sub(1))?;

    let mut entries: Vec<PosteriorEntry> = Vec::new();
    for dag in enumerate_dags_with_cap(p, cap)? {
        let lm = log_marginal(&table, &dag, g)?;
        let lp = prior.log_prior(dag.edge_count());
        entries.push(PosteriorEntry {
            mask: dag.canonical_mask(),
            log_marginal: lm,
            log_prior: lp,
            posterior: 0.0,
        });
    }

    let max_score = entries
        .iter()
        .map(|e| e.log_marginal + e.log_prior)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = entries
        .iter()
        .map(|e| (e.log_marginal + e.log_prior - max_score).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    for (e, w) in entries.iter_mut().zip(&weights) {
        e.posterior = *w;
    }

    let mut map_masks: Vec<u64> = entries
        .iter()
        .filter(|e| scores_tied(e.log_marginal + e.log_prior, max_score))
        .map(|e| e.mask)
        .collect();
    map_masks.sort_unstable();

    // Rank by unnormalized log score, canonical mask breaking ties.
    entries.sort_by(|a, b| {
        let sa = a.log_marginal + a.log_prior;
        let sb = b.log_marginal + b.log_prior;
        sb.partial_cmp(&sa).unwrap().then(a.mask.cmp(&b.mask))
    });

    Ok(PosteriorResult {
        g,
        prior,
        n: data.n(),
        p,
        entries,
        map_masks,
    })
}
