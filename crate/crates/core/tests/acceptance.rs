//! Acceptance suite: one test per release criterion, each printing a PASS
//! line with the measured quantities. Tolerances are fixed here, not tuned.

use std::time::Instant;

use evdag_core::experiment::{run_consistency_experiment, ExperimentConfig, GPolicy};
use evdag_core::graph::{enumerate_dags, random_dag, CausalOrder, Dag};
use evdag_core::population::{
    cholesky_residuals, population_score_gap, residual_variance, verify_identifiability,
};
use evdag_core::scoring::{log_marginal, log_marginal_direct, DagPrior, NodeScoreTable};
use evdag_core::search::{exact_dp_bic, exhaustive_best, Criterion};
use evdag_core::sem::{Dataset, ErrorFamily, SemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

const SPEC_SWEEP_SIZE: usize = 200;

/// Deterministic pool of random SEMs: p cycles {2,3,4}, sigma2 cycles
/// {0.25, 1, 4}, coefficient magnitudes in [0.5, 2].
fn spec_sweep() -> Vec<SemSpec> {
    (0..SPEC_SWEEP_SIZE)
        .map(|i| {
            let p = [2, 3, 4][i % 3];
            let sigma2 = [0.25, 1.0, 4.0][(i / 3) % 3];
            let family = ErrorFamily::ALL[i % ErrorFamily::ALL.len()];
            let mut rng = ChaCha12Rng::seed_from_u64(90_000 + i as u64);
            let dag = random_dag(p, 0.6, &mut rng);
            SemSpec::random(dag, 0.5, 2.0, sigma2, family, 90_000 + i as u64).unwrap()
        })
        .collect()
}

fn chain_spec(p: usize) -> SemSpec {
    let edges: Vec<(usize, usize)> = (0..p - 1).map(|j| (j, j + 1)).collect();
    let coefficients: Vec<Vec<f64>> = (0..p)
        .map(|j| if j == 0 { vec![] } else { vec![1.0] })
        .collect();
    SemSpec::new(
        Dag::from_edges(p, &edges).unwrap(),
        coefficients,
        1.0,
        ErrorFamily::Gaussian,
    )
    .unwrap()
}

fn consistency_config(spec: SemSpec) -> ExperimentConfig {
    ExperimentConfig {
        spec,
        families: ErrorFamily::ALL.to_vec(),
        n_grid: vec![100, 1000, 10_000],
        seeds: 100,
        master_seed: 2024,
        g: GPolicy::SampleSize,
        prior: DagPrior::Uniform,
        workers: 4,
        cap: 6,
    }
}

#[test]
fn a1_minimum_score_law_holds_on_random_sems() {
    let started = Instant::now();
    let specs = spec_sweep();
    for (i, spec) in specs.iter().enumerate() {
        let report = verify_identifiability(spec, 6).unwrap();
        let optimum = spec.node_count() as f64 * spec.sigma2();
        assert!(
            report.verdict,
            "spec {i}: argmin set diverged from the supergraph set \
             (min_total {}, expected {optimum})",
            report.min_total
        );
        assert!(
            (report.min_total - optimum).abs() <= 1e-9 * optimum,
            "spec {i}: min_total {} vs {optimum}",
            report.min_total
        );
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() <= 120,
        "sweep took {elapsed:?}, budget is two minutes single-threaded"
    );
    println!(
        "PASS criterion-1: argmin = supergraph set with min = p*sigma2 on {} random SEMs ({elapsed:?})",
        specs.len()
    );
}

#[test]
fn a2_cholesky_diagonals_factor_the_determinant() {
    let mut orders_checked = 0u64;
    for spec in spec_sweep() {
        let p = spec.node_count();
        let cov = spec.implied_covariance();
        let det = cov.clone().lu().determinant();
        for perm in permutations(p) {
            let order = CausalOrder::new(perm).unwrap();
            let squared = cholesky_residuals(&cov, &order).unwrap();
            let product: f64 = squared.iter().product();
            assert!(
                (product - det).abs() <= 1e-9 * det.abs(),
                "product {product} vs det {det}"
            );
            for (rank, &w2) in squared.iter().enumerate() {
                let node = order.node_at(rank);
                let regression = residual_variance(&cov, node, &order.predecessors(node)).unwrap();
                assert!(
                    (w2 - regression).abs() <= 1e-10 * regression.abs(),
                    "rank {rank}: {w2} vs {regression}"
                );
            }
            orders_checked += 1;
        }
    }
    println!(
        "PASS criterion-2: Cholesky diagonal product matched det and per-rank regressions over {orders_checked} orders"
    );
}

fn permutations(p: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..p).collect();
    heap_permute(&mut items, p, &mut out);
    out
}

fn heap_permute(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == 1 {
        out.push(items.clone());
        return;
    }
    for i in 0..k {
        heap_permute(items, k - 1, out);
        if k % 2 == 0 {
            items.swap(i, k - 1);
        } else {
            items.swap(0, k - 1);
        }
    }
}

#[test]
fn a3_closed_form_marginal_matches_the_dense_solve() {
    let mut rng = ChaCha12Rng::seed_from_u64(33_000);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 100 {
        let n = rng.random_range(5..=20usize);
        let p = rng.random_range(2..=4usize);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let data = Dataset::from_rows(&rows).unwrap();
        let dag = random_dag(p, 0.5, &mut rng);
        let g = [1.0, 4.0, n as f64][checked % 3];
        let table = NodeScoreTable::build(&data, p - 1).unwrap();
        let closed = log_marginal(&table, &dag, g).unwrap();
        let direct = log_marginal_direct(&data, &dag, g).unwrap();
        let gap = (closed - direct).abs();
        worst = worst.max(gap);
        assert!(
            gap <= 1e-8,
            "instance {checked} (n={n}, p={p}, g={g}): {closed} vs {direct}"
        );
        checked += 1;
    }
    println!(
        "PASS criterion-3: closed-form and dense marginals agree on {checked} instances (worst gap {worst:.3e})"
    );
}

#[test]
fn a4_posterior_concentrates_on_the_true_chain() {
    let started = Instant::now();
    for p in [2usize, 3] {
        let config = consistency_config(chain_spec(p));
        let report = run_consistency_experiment(&config, None).unwrap();
        for family in ErrorFamily::ALL {
            let medians: Vec<f64> = config
                .n_grid
                .iter()
                .map(|&n| {
                    report
                        .aggregates
                        .iter()
                        .find(|a| a.family == family && a.n == n)
                        .map(|a| a.median_posterior_true)
                        .unwrap()
                })
                .collect();
            for w in medians.windows(2) {
                assert!(
                    w[1] >= w[0],
                    "p={p} {family:?}: medians not non-decreasing: {medians:?}"
                );
            }
            let last = report
                .aggregates
                .iter()
                .find(|a| a.family == family && a.n == 10_000)
                .unwrap();
            assert!(
                last.median_posterior_true > 0.9,
                "p={p} {family:?}: median at n=1e4 is {}",
                last.median_posterior_true
            );
            assert!(
                last.map_rate >= 0.9,
                "p={p} {family:?}: MAP rate at n=1e4 is {}",
                last.map_rate
            );
            println!(
                "  p={p} {:8}: medians {:?}, map rate at 1e4 = {}",
                family.name(),
                medians,
                last.map_rate
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() <= 600,
        "sweep took {elapsed:?}, budget is ten minutes on four workers"
    );
    println!("PASS criterion-4: posterior of the true chain is monotone and exceeds 0.9 at n=1e4 ({elapsed:?})");
}

#[test]
fn a5_population_gap_is_positive_for_nonempty_truths() {
    let mut nonempty = 0;
    for (i, spec) in spec_sweep().iter().enumerate() {
        if spec.graph().edge_count() == 0 {
            continue;
        }
        nonempty += 1;
        let gap = population_score_gap(spec, 6).unwrap();
        assert!(gap > 0.0, "spec {i}: gap {gap}");
    }
    assert!(nonempty > 0);
    println!("PASS criterion-5: population log-score gap positive on {nonempty} non-empty truths");
}

#[test]
fn a6_dp_and_exhaustive_search_agree() {
    for i in 0..50u64 {
        let p = 2 + (i as usize % 4);
        let mut rng = ChaCha12Rng::seed_from_u64(66_000 + i);
        let dag = random_dag(p, 0.5, &mut rng);
        let spec = SemSpec::random(dag, 0.5, 2.0, 1.0, ErrorFamily::Gaussian, 66_000 + i).unwrap();
        let data = spec.simulate(2000, 66_500 + i).unwrap();
        let exhaustive = exhaustive_best(&data, Criterion::Bic, 6).unwrap();
        let table = NodeScoreTable::build(&data, p - 1).unwrap();
        let dp = exact_dp_bic(&table, p - 1).unwrap();
        assert!(
            (dp.best_score - exhaustive.best_score).abs()
                <= 1e-9 * (1.0 + exhaustive.best_score.abs()),
            "instance {i}: {} vs {}",
            dp.best_score,
            exhaustive.best_score
        );
        assert_eq!(dp.best, exhaustive.best, "instance {i}: argmin sets differ");
    }
    println!("PASS criterion-6: DP equals exhaustive BIC search on 50 simulated datasets");
}

#[test]
fn a7_enumeration_counts_are_exact() {
    let expected = [1u64, 3, 25, 543, 29_281];
    for (i, &want) in expected.iter().enumerate() {
        let p = i + 1;
        let got = enumerate_dags(p).unwrap().count() as u64;
        assert_eq!(got, want, "p = {p}");
    }
    println!("PASS criterion-7: DAG counts for p=1..5 are {expected:?}");
}

#[test]
fn a8_log_difference_contracts_under_shifts() {
    let mut rng = ChaCha12Rng::seed_from_u64(88_000);
    for i in 0..10_000 {
        let a = rng.random_range(1e-9..1e9f64);
        let b = rng.random_range(1e-9..1e9f64);
        let t = rng.random_range(0.0..1e9f64);
        let shifted = ((a + t).ln() - (b + t).ln()).abs();
        let plain = (a.ln() - b.ln()).abs();
        assert!(shifted <= plain + 1e-12, "triple {i}: a={a} b={b} t={t}");
    }
    println!("PASS criterion-8: |ln(a+t) - ln(b+t)| <= |ln a - ln b| on 10000 random triples");
}

#[test]
fn a9_reports_are_byte_identical_across_runs() {
    let smallest = ExperimentConfig {
        spec: chain_spec(2),
        families: vec![ErrorFamily::Gaussian],
        n_grid: vec![100],
        seeds: 100,
        master_seed: 2024,
        g: GPolicy::SampleSize,
        prior: DagPrior::Uniform,
        workers: 4,
        cap: 6,
    };
    let first = run_consistency_experiment(&smallest, None).unwrap();
    let second = run_consistency_experiment(&smallest, None).unwrap();
    assert_eq!(first.canonical_json(), second.canonical_json());
    assert_eq!(first.runs_csv(), second.runs_csv());
    println!(
        "PASS criterion-9: repeated runs produced byte-identical reports ({} bytes)",
        first.canonical_json().len()
    );
}
