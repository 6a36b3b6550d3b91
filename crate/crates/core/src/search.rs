//! Structure search. Three engines share one result type:
//!
//! * exhaustive enumeration, exact for any criterion but capped in `p`;
//! * subset dynamic programming, exact for the BIC score only: that score
//!   decomposes node-wise, while the marginal likelihood keeps the node sum
//!   inside a logarithm and therefore does not decompose;
//! * greedy hill climbing with restarts, a scalability escape hatch with no
//!   optimality guarantee.
//!
//! Ties are always resolved toward smaller canonical adjacency masks so
//! results are reproducible across runs and thread counts.

#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeSet, HashMap, HashSet};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{enumerate_dags_with_cap, random_dag, Dag};
use crate::scoring::{
    bic_node_term, bic_score, log_marginal, mask_of, node_rss, parents_of_mask, scores_tied,
    NodeScoreTable,
};
use crate::sem::Dataset;

/// Default memory budget for the DP arrays (bytes).
const DEFAULT_DP_BUDGET: u64 = 2 << 30;

/// Safety valve on tie reconstruction; a degenerate dataset could otherwise
/// make the optimum set explode.
const RECONSTRUCT_LIMIT: usize = 100_000;

/// Scoring criterion driving a search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    /// `n R + edges ln n`, minimized.
    Bic,
    /// g-prior log marginal likelihood, maximized.
    LogMarginal { g: f64 },
}

impl Criterion {
    fn is_minimizing(&self) -> bool {
        matches!(self, Criterion::Bic)
    }

    /// True iff `a` is strictly better than `b` beyond floating-point noise.
    fn improves(&self, a: f64, b: f64) -> bool {
        let slack = 1e-12 * (1.0 + a.abs().max(b.abs()));
        if self.is_minimizing() {
            a < b - slack
        } else {
            a > b + slack
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMethod {
    Exhaustive,
    Dp,
    Greedy,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchStats {
    /// Candidate scores evaluated.
    pub scored: u64,
    pub wall_ms: u64,
    /// Final score of each greedy restart; empty for the exact engines.
    pub restart_scores: Vec<f64>,
    /// Whether any restart reached the caller-supplied reference optimum.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reached_reference: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchResult {
    /// All optima found, sorted canonically.
    pub best: Vec<Dag>,
    pub best_score: f64,
    pub method: SearchMethod,
    pub stats: SearchStats,
}

/// Scores every DAG through a shared score table and returns all optima.
pub fn exhaustive_best(data: &Dataset, criterion: Criterion, cap: usize) -> Result<SearchResult> {
    let started = Instant::now();
    let p = data.p();
    let table = NodeScoreTable::build(data, p.saturating_sub(1))?;
    let mut scored: Vec<(u64, f64)> = Vec::new();
    for dag in enumerate_dags_with_cap(p, cap)? {
        let s = match criterion {
            Criterion::Bic => bic_score(&table, &dag)?,
            Criterion::LogMarginal { g } => log_marginal(&table, &dag, g)?,
        };
        scored.push((dag.canonical_mask(), s));
    }
    let best_score = scored.iter().map(|&(_, s)| s).fold(
        if criterion.is_minimizing() {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        },
        |acc, s| {
            if criterion.is_minimizing() {
                acc.min(s)
            } else {
                acc.max(s)
            }
        },
    );
    let mut masks: Vec<u64> = scored
        .iter()
        .filter(|&&(_, s)| scores_tied(s, best_score))
        .map(|&(m, _)| m)
        .collect();
    masks.sort_unstable();
    Ok(SearchResult {
        best: masks.iter().map(|&m| dag_from_mask(p, m)).collect(),
        best_score,
        method: SearchMethod::Exhaustive,
        stats: SearchStats {
            scored: scored.len() as u64,
            wall_ms: started.elapsed().as_millis() as u64,
            restart_scores: Vec::new(),
            reached_reference: None,
        },
    })
}

fn dag_from_mask(p: usize, mask: u64) -> Dag {
    Dag::from_canonical_mask(p, mask).expect("search masks are valid DAGs")
}

/// Exact minimization of the BIC score by dynamic programming over node
/// subsets: best parent set per (node, candidate set), best sink per subset,
/// then reconstruction of every optimal order and parent assignment.
/// Optimal among all DAGs whose nodes have at most `max_parents` parents
/// (`p - 1` means unrestricted).
pub fn exact_dp_bic(table: &NodeScoreTable, max_parents: usize) -> Result<SearchResult> {
    exact_dp_bic_with_budget(table, max_parents, DEFAULT_DP_BUDGET)
}

/// Checks the DP memory estimate for `p` variables against the default
/// budget without doing any work; callers can refuse before they spend time
/// populating a score table.
pub fn dp_size_check(p: usize) -> Result<()> {
    dp_size_check_with_budget(p, DEFAULT_DP_BUDGET)
}

fn dp_size_check_with_budget(p: usize, budget_bytes: u64) -> Result<()> {
    let subsets: u64 = 1u64
        .checked_shl(p as u32)
        .ok_or_else(|| Error::ResourceCap(format!("{p} variables overflow subset masks")))?;
    // Per node: one f64 score per subset; plus the sink-layer scores.
    let estimate = (p as u64 + 1) * subsets * 8;
    if estimate > budget_bytes {
        return Err(Error::ResourceCap(format!(
            "subset DP on {p} variables needs about {} MiB (> budget {} MiB); \
             lower the variable count or raise the budget",
            estimate >> 20,
            budget_bytes >> 20
        )));
    }
    Ok(())
}

pub fn exact_dp_bic_with_budget(
    table: &NodeScoreTable,
    max_parents: usize,
    budget_bytes: u64,
) -> Result<SearchResult> {
    let started = Instant::now();
    let p = table.p();
    let cap = max_parents.min(p - 1);
    if cap > table.max_parents() {
        return Err(Error::InvalidInput(format!(
            "table only covers parent sets up to size {}, requested cap {cap}",
            table.max_parents()
        )));
    }
    dp_size_check_with_budget(p, budget_bytes)?;
    let subsets = 1usize << p;
    let full: u64 = (subsets - 1) as u64;

    // Phase A: cheapest reachable parent score per (node, candidate set).
    let mut best_local: Vec<Vec<f64>> = vec![vec![f64::INFINITY; subsets]; p];
    let mut scored = 0u64;
    for j in 0..p {
        let local = &mut best_local[j];
        for mask in 0..subsets as u64 {
            if mask & (1 << j) != 0 {
                continue;
            }
            let mut best = if (mask.count_ones() as usize) <= cap {
                scored += 1;
                bic_node_term(table, j, mask)?
            } else {
                f64::INFINITY
            };
            let mut bits = mask;
            while bits != 0 {
                let c = bits & bits.wrapping_neg();
                bits ^= c;
                best = best.min(local[(mask ^ c) as usize]);
            }
            local[mask as usize] = best;
        }
    }

    // Phase B: best score of an ordering of each subset, built sink-first.
    let mut dp = vec![f64::INFINITY; subsets];
    dp[0] = 0.0;
    for mask in 1..subsets as u64 {
        let mut bits = mask;
        let mut best = f64::INFINITY;
        while bits != 0 {
            let s = bits & bits.wrapping_neg();
            bits ^= s;
            let rest = mask ^ s;
            let candidate =
                dp[rest as usize] + best_local[s.trailing_zeros() as usize][rest as usize];
            best = best.min(candidate);
        }
        dp[mask as usize] = best;
    }
    let best_score = dp[full as usize];

    // Phase C: walk every tied sink choice and every tied parent set.
    let mut optima: BTreeSet<Vec<u64>> = BTreeSet::new();
    let mut assignment: Vec<(usize, u64)> = Vec::with_capacity(p);
    reconstruct(
        table,
        cap,
        &best_local,
        &dp,
        full,
        &mut assignment,
        &mut optima,
    )?;

    let best: Vec<Dag> = optima
        .iter()
        .map(|rows| {
            let parents = rows
                .iter()
                .map(|&m| parents_of_mask(m, p))
                .collect::<Vec<_>>();
            Dag::new(p, parents).expect("DP assignment is acyclic by construction")
        })
        .collect();
    let mut best = best;
    best.sort();
    Ok(SearchResult {
        best,
        best_score,
        method: SearchMethod::Dp,
        stats: SearchStats {
            scored,
            wall_ms: started.elapsed().as_millis() as u64,
            restart_scores: Vec::new(),
            reached_reference: None,
        },
    })
}

fn reconstruct(
    table: &NodeScoreTable,
    cap: usize,
    best_local: &[Vec<f64>],
    dp: &[f64],
    mask: u64,
    assignment: &mut Vec<(usize, u64)>,
    optima: &mut BTreeSet<Vec<u64>>,
) -> Result<()> {
    if mask == 0 {
        let p = best_local.len();
        let mut rows = vec![0u64; p];
        for &(node, pa) in assignment.iter() {
            rows[node] = pa;
        }
        if optima.len() >= RECONSTRUCT_LIMIT {
            return Err(Error::ResourceCap(
                "optimum set reconstruction exceeded its limit; the score ties are degenerate"
                    .into(),
            ));
        }
        optima.insert(rows);
        return Ok(());
    }
    let target = dp[mask as usize];
    let mut bits = mask;
    while bits != 0 {
        let s = bits & bits.wrapping_neg();
        bits ^= s;
        let node = s.trailing_zeros() as usize;
        let rest = mask ^ s;
        if !scores_tied(dp[rest as usize] + best_local[node][rest as usize], target) {
            continue;
        }
        let mut parent_sets = HashSet::new();
        collect_optimal_parent_sets(
            table,
            cap,
            best_local,
            node,
            rest,
            best_local[node][rest as usize],
            &mut HashSet::new(),
            &mut parent_sets,
        )?;
        let mut parent_sets: Vec<u64> = parent_sets.into_iter().collect();
        parent_sets.sort_unstable();
        for pa in parent_sets {
            assignment.push((node, pa));
            reconstruct(table, cap, best_local, dp, rest, assignment, optima)?;
            assignment.pop();
        }
    }
    Ok(())
}

/// Gathers every parent set achieving the optimal local score for `node`
/// within the candidate set, following only tied branches of the Phase A
/// recurrence.
#[allow(clippy::too_many_arguments)]
fn collect_optimal_parent_sets(
    table: &NodeScoreTable,
    cap: usize,
    best_local: &[Vec<f64>],
    node: usize,
    candidates: u64,
    target: f64,
    visited: &mut HashSet<u64>,
    out: &mut HashSet<u64>,
) -> Result<()> {
    if !visited.insert(candidates) {
        return Ok(());
    }
    if (candidates.count_ones() as usize) <= cap {
        let direct = bic_node_term(table, node, candidates)?;
        if scores_tied(direct, target) {
            out.insert(candidates);
        }
    }
    let mut bits = candidates;
    while bits != 0 {
        let c = bits & bits.wrapping_neg();
        bits ^= c;
        let smaller = candidates ^ c;
        if scores_tied(best_local[node][smaller as usize], target) {
            collect_optimal_parent_sets(
                table, cap, best_local, node, smaller, target, visited, out,
            )?;
        }
    }
    Ok(())
}

/// Options for [`greedy_hill_climb`].
#[derive(Debug, Clone)]
pub struct GreedyOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Fixed starting graph for the first restart (later restarts are random).
    pub start: Option<Dag>,
    /// Known optimum to compare restarts against, when one is available.
    pub reference_score: Option<f64>,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        GreedyOptions {
            restarts: 10,
            seed: 0,
            start: None,
            reference_score: None,
        }
    }
}

const GREEDY_TAG: u64 = 0x6772_6565_6479_5f68;

/// First-improvement hill climbing over single-edge additions, deletions and
/// reversals, with seeded random restarts. Node scores are computed on demand
/// and cached, so only visited parent sets are ever regressed.
pub fn greedy_hill_climb(
    data: &Dataset,
    criterion: Criterion,
    opts: &GreedyOptions,
) -> Result<SearchResult> {
    let started = Instant::now();
    let p = data.p();
    if p > 63 {
        return Err(Error::ResourceCap(
            "greedy search supports at most 63 variables".into(),
        ));
    }
    if opts.restarts == 0 {
        return Err(Error::InvalidInput(
            "greedy search needs at least one restart".into(),
        ));
    }
    if let Criterion::LogMarginal { g } = criterion {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "g must be positive and finite, got {g}"
            )));
        }
    }

    let mut cache = LazyScores::new(data);
    let mut scored = 0u64;
    let mut restart_scores = Vec::with_capacity(opts.restarts);
    let mut best_score: Option<f64> = None;
    let mut best_keys: BTreeSet<Vec<u64>> = BTreeSet::new();
    let mut best_dags: HashMap<Vec<u64>, Dag> = HashMap::new();

    for restart in 0..opts.restarts {
        let start_dag = match (&opts.start, restart) {
            (Some(dag), 0) => {
                if dag.node_count() != p {
                    return Err(Error::InvalidInput(format!(
                        "start graph has {} nodes but data has {p} columns",
                        dag.node_count()
                    )));
                }
                dag.clone()
            }
            _ => {
                let mut rng = crate::sem::substream(opts.seed, GREEDY_TAG, restart as u64);
                random_dag(p, 0.5, &mut rng)
            }
        };
        let (local_dag, local_score, evals) = climb(&mut cache, criterion, start_dag)?;
        scored += evals;
        restart_scores.push(local_score);
        let is_better = best_score.map_or(true, |b| criterion.improves(local_score, b));
        if is_better && !best_score.is_some_and(|b| scores_tied(local_score, b)) {
            best_score = Some(local_score);
            best_keys.clear();
            best_dags.clear();
        }
        if scores_tied(local_score, best_score.unwrap_or(local_score)) {
            let key = local_dag.canonical_key();
            if best_keys.insert(key.clone()) {
                best_dags.insert(key, local_dag);
            }
        }
    }

    let best_score = best_score.expect("at least one restart ran");
    let best: Vec<Dag> = best_keys.iter().map(|k| best_dags[k].clone()).collect();
    let reached_reference = opts
        .reference_score
        .map(|reference| restart_scores.iter().any(|&s| scores_tied(s, reference)));
    Ok(SearchResult {
        best,
        best_score,
        method: SearchMethod::Greedy,
        stats: SearchStats {
            scored,
            wall_ms: started.elapsed().as_millis() as u64,
            restart_scores,
            reached_reference,
        },
    })
}

struct LazyScores<'a> {
    data: &'a Dataset,
    v_n: f64,
    cache: HashMap<(usize, u64), f64>,
}

impl<'a> LazyScores<'a> {
    fn new(data: &'a Dataset) -> Self {
        LazyScores {
            data,
            v_n: crate::scoring::total_second_moment(data),
            cache: HashMap::new(),
        }
    }

    fn rss(&mut self, j: usize, mask: u64) -> Result<f64> {
        if let Some(&r) = self.cache.get(&(j, mask)) {
            return Ok(r);
        }
        let parents = parents_of_mask(mask, self.data.p());
        let r = node_rss(self.data, j, &parents)?;
        self.cache.insert((j, mask), r);
        Ok(r)
    }

    fn criterion_score(&self, criterion: Criterion, total_rss: f64, edges: usize) -> f64 {
        let n = self.data.n() as f64;
        let p = self.data.p() as f64;
        match criterion {
            Criterion::Bic => n * total_rss + edges as f64 * n.ln(),
            Criterion::LogMarginal { g } => {
                let np = n * p;
                -(np / 2.0) * (self.v_n + g * total_rss).ln()
                    + (np - edges as f64) / 2.0 * (1.0 + g).ln()
            }
        }
    }
}

/// One hill-climbing run; returns the local optimum, its score, and the
/// number of candidate evaluations.
fn climb(cache: &mut LazyScores<'_>, criterion: Criterion, start: Dag) -> Result<(Dag, f64, u64)> {
    let p = start.node_count();
    let mut parent_masks: Vec<u64> = (0..p).map(|j| mask_of(start.parents(j))).collect();
    let mut node_rss: Vec<f64> = (0..p)
        .map(|j| cache.rss(j, parent_masks[j]))
        .collect::<Result<_>>()?;
    let mut total_rss: f64 = node_rss.iter().sum();
    let mut edges: usize = parent_masks.iter().map(|m| m.count_ones() as usize).sum();
    let mut current = cache.criterion_score(criterion, total_rss, edges);
    let mut evals = 0u64;

    'outer: loop {
        for u in 0..p {
            for v in 0..p {
                if u == v {
                    continue;
                }
                let has = parent_masks[v] & (1 << u) != 0;
                // Addition.
                if !has {
                    let mut trial = parent_masks.clone();
                    trial[v] |= 1 << u;
                    if is_acyclic_masks(&trial, p) {
                        let new_v = cache.rss(v, trial[v])?;
                        let candidate = cache.criterion_score(
                            criterion,
                            total_rss - node_rss[v] + new_v,
                            edges + 1,
                        );
                        evals += 1;
                        if criterion.improves(candidate, current) {
                            parent_masks = trial;
                            total_rss = total_rss - node_rss[v] + new_v;
                            node_rss[v] = new_v;
                            edges += 1;
                            current = candidate;
                            continue 'outer;
                        }
                    }
                } else {
                    // Deletion keeps acyclicity automatically.
                    let removed = parent_masks[v] & !(1 << u);
                    let new_v = cache.rss(v, removed)?;
                    let candidate = cache.criterion_score(
                        criterion,
                        total_rss - node_rss[v] + new_v,
                        edges - 1,
                    );
                    evals += 1;
                    if criterion.improves(candidate, current) {
                        parent_masks[v] = removed;
                        total_rss = total_rss - node_rss[v] + new_v;
                        node_rss[v] = new_v;
                        edges -= 1;
                        current = candidate;
                        continue 'outer;
                    }
                    // Reversal: drop u -> v, add v -> u.
                    let mut trial = parent_masks.clone();
                    trial[v] &= !(1 << u);
                    trial[u] |= 1 << v;
                    if is_acyclic_masks(&trial, p) {
                        let new_v = cache.rss(v, trial[v])?;
                        let new_u = cache.rss(u, trial[u])?;
                        let candidate = cache.criterion_score(
                            criterion,
                            total_rss - node_rss[v] - node_rss[u] + new_v + new_u,
                            edges,
                        );
                        evals += 1;
                        if criterion.improves(candidate, current) {
                            parent_masks = trial;
                            total_rss = total_rss - node_rss[v] - node_rss[u] + new_v + new_u;
                            node_rss[v] = new_v;
                            node_rss[u] = new_u;
                            current = candidate;
                            continue 'outer;
                        }
                    }
                }
            }
        }
        break;
    }

    let parents = parent_masks
        .iter()
        .map(|&m| parents_of_mask(m, p))
        .collect::<Vec<_>>();
    let dag = Dag::new(p, parents).expect("moves preserve acyclicity");
    Ok((dag, current, evals))
}

fn is_acyclic_masks(parent_masks: &[u64], p: usize) -> bool {
    let mut masks = parent_masks.to_vec();
    let mut alive: u64 = (1u64 << p) - 1;
    while alive != 0 {
        let mut peeled = false;
        for j in 0..p {
            let bit = 1u64 << j;
            if alive & bit != 0 && masks[j] & alive == 0 {
                alive &= !bit;
                masks[j] = 0;
                peeled = true;
            }
        }
        if !peeled {
            return false;
        }
    }
    true
}
