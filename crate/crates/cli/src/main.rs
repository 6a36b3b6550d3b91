//! `evdag`: simulate equal-variance linear SEMs, verify the population
//! identifiability law, and score or search DAG structures on data.
//!
//! Exit codes: 0 success, 2 input error, 3 numeric/degeneracy error,
//! 4 resource cap.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use evdag_core::experiment::{run_consistency_experiment, ExperimentConfig, GPolicy};
use evdag_core::graph::DEFAULT_ENUMERATION_CAP;
use evdag_core::io::{load_csv, read_json, write_csv, write_json};
use evdag_core::population::verify_identifiability;
use evdag_core::scoring::{posterior_over_dags, score_dag, DagPrior, NodeScoreTable};
use evdag_core::search::{
    dp_size_check, exact_dp_bic, greedy_hill_climb, Criterion, GreedyOptions, SearchResult,
};
use evdag_core::sem::SemSpec;
use evdag_core::{Dag, Dataset, Error};

#[derive(Parser)]
#[command(
    name = "evdag",
    version,
    about = "Structure learning for equal-variance linear SEMs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// RNG seed (simulation, greedy restarts). Falls back to the spec's
    /// recorded seed, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// g-prior scale: `n` (the default) or a positive number.
    #[arg(long, global = true)]
    g: Option<String>,

    /// DAG prior: `uniform` (default) or `edge:q` with q > 0.
    #[arg(long, global = true)]
    prior: Option<String>,

    /// Subtract column means after loading data.
    #[arg(long, global = true)]
    center: bool,

    /// Node-count cap for exhaustive enumeration.
    #[arg(long, global = true)]
    cap: Option<usize>,

    /// Output path: a file for JSON/CSV results, a directory for experiments.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw observations from a SEM spec file and write them as CSV.
    Simulate {
        /// SEM spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Number of observations.
        #[arg(long)]
        n: usize,
        /// Also write the spec, with the seed recorded, next to the data.
        #[arg(long)]
        write_spec: Option<PathBuf>,
    },
    /// Check that the population score is minimized exactly by the
    /// supergraphs of the spec's graph, and report the log-score gap.
    Verify {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Score DAGs against a dataset: a single graph (--dag), every graph
    /// (--all), or the exact BIC optimum (--dp).
    Score {
        #[arg(long)]
        data: PathBuf,
        /// Treat the first CSV row as column names.
        #[arg(long)]
        header: bool,
        /// DAG file (JSON) to score.
        #[arg(long)]
        dag: Option<PathBuf>,
        /// Rank every DAG by posterior mass.
        #[arg(long)]
        all: bool,
        /// Run the exact dynamic-programming BIC search.
        #[arg(long)]
        dp: bool,
        /// Keep only the top K rows of a ranking.
        #[arg(long)]
        top: Option<usize>,
        /// Parent-count cap for the DP search.
        #[arg(long)]
        max_parents: Option<usize>,
    },
    /// Exact posterior over every DAG on the dataset's variables.
    Posterior {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        header: bool,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Exact BIC optimum by dynamic programming over node subsets.
    SearchDp {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        header: bool,
        #[arg(long)]
        max_parents: Option<usize>,
    },
    /// Greedy hill climbing with seeded random restarts.
    SearchGreedy {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        header: bool,
        /// `bic` or `marginal`.
        #[arg(long)]
        criterion: Option<String>,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
    },
    /// Posterior-consistency sweep described by a config file (JSON).
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let g_policy: GPolicy = match &cli.g {
        Some(text) => text.parse()?,
        None => GPolicy::SampleSize,
    };
    let prior: DagPrior = match &cli.prior {
        Some(text) => text.parse()?,
        None => DagPrior::Uniform,
    };
    let cap = cli.cap.unwrap_or(DEFAULT_ENUMERATION_CAP);

    match &cli.command {
        Command::Simulate {
            spec,
            n,
            write_spec,
        } => {
            let spec: SemSpec = read_json(spec)?;
            let seed = cli.seed.or(spec.seed()).unwrap_or(0);
            let data = spec.simulate(*n, seed)?;
            match &cli.out {
                Some(path) => {
                    write_csv(&data, path)?;
                    eprintln!(
                        "wrote {} rows x {} columns to {}",
                        data.n(),
                        data.p(),
                        path.display()
                    );
                }
                None => print!("{}", evdag_core::io::render_csv(&data)),
            }
            if let Some(path) = write_spec {
                write_json(path, &spec.with_seed(seed))?;
            }
            Ok(())
        }

        Command::Verify { spec } => {
            let spec: SemSpec = read_json(spec)?;
            let report = verify_identifiability(&spec, cap)?;
            println!(
                "verdict:     {}",
                if report.verdict {
                    "confirmed"
                } else {
                    "VIOLATED"
                }
            );
            println!("min total:   {}", report.min_total);
            println!("argmin set:  {} DAG(s)", report.argmin.len());
            for dag in report.argmin.iter().take(5) {
                println!("    edges {:?}", dag.edges());
            }
            if report.argmin.len() > 5 {
                println!("    ... {} more", report.argmin.len() - 5);
            }
            println!("supergraphs: {}", report.supergraphs.len());
            match report.delta_star {
                Some(gap) => println!("log gap:     {gap}"),
                None => println!("log gap:     undefined (empty true graph)"),
            }
            write_or_print(cli.out.as_deref(), &serde_json::to_value(&report)?)
        }

        Command::Score {
            data,
            header,
            dag,
            all,
            dp,
            top,
            max_parents,
        } => {
            let dataset = load_dataset(data, *header, cli.center)?;
            if *dp {
                let result = run_dp(&dataset, *max_parents)?;
                print_search_result(&result);
                return write_or_print(cli.out.as_deref(), &serde_json::to_value(&result)?);
            }
            if *all {
                return rank_posterior(&dataset, prior, g_policy, cap, *top, cli.out.as_deref());
            }
            let Some(dag_path) = dag else {
                return Err(Error::InvalidInput(
                    "score needs one of --dag <file>, --all, or --dp".into(),
                ));
            };
            let dag: Dag = read_json(dag_path)?;
            if dag.node_count() != dataset.p() {
                return Err(Error::InvalidInput(format!(
                    "graph has {} nodes but data has {} columns",
                    dag.node_count(),
                    dataset.p()
                )));
            }
            let g = g_policy.resolve(dataset.n());
            let table = NodeScoreTable::build(&dataset, dataset.p() - 1)?;
            let score = score_dag(&table, &dag, g)?;
            let per_node: Vec<f64> = (0..dataset.p())
                .map(|j| table.get(j, dag.parents(j)))
                .collect::<Result<_, _>>()?;
            println!("log marginal: {}", score.log_marginal);
            println!("bic:          {}", score.bic);
            println!("rss total:    {}", score.rss_total);
            println!("edges:        {}", score.edge_count);
            println!("per-node rss: {per_node:?}");
            let json = serde_json::json!({
                "dag": dag,
                "score": score,
                "per_node_rss": per_node,
                "centered": dataset.is_centered(),
            });
            write_or_print(cli.out.as_deref(), &json)
        }

        Command::Posterior { data, header, top } => {
            let dataset = load_dataset(data, *header, cli.center)?;
            rank_posterior(&dataset, prior, g_policy, cap, *top, cli.out.as_deref())
        }

        Command::SearchDp {
            data,
            header,
            max_parents,
        } => {
            let dataset = load_dataset(data, *header, cli.center)?;
            let result = run_dp(&dataset, *max_parents)?;
            print_search_result(&result);
            write_or_print(cli.out.as_deref(), &serde_json::to_value(&result)?)
        }

        Command::SearchGreedy {
            data,
            header,
            criterion,
            restarts,
        } => {
            let dataset = load_dataset(data, *header, cli.center)?;
            let criterion = parse_criterion(criterion.as_deref(), g_policy, dataset.n())?;
            let opts = GreedyOptions {
                restarts: *restarts,
                seed: cli.seed.unwrap_or(0),
                ..GreedyOptions::default()
            };
            let result = greedy_hill_climb(&dataset, criterion, &opts)?;
            print_search_result(&result);
            write_or_print(cli.out.as_deref(), &serde_json::to_value(&result)?)
        }

        Command::Experiment { config } => {
            let config: ExperimentConfig = read_json(config)?;
            let report = run_consistency_experiment(&config, cli.out.as_deref())?;
            println!(
                "{:10} {:>7} {:>10} {:>10} {:>9}",
                "family", "n", "mean", "median", "map rate"
            );
            for agg in &report.aggregates {
                println!(
                    "{:10} {:>7} {:>10.6} {:>10.6} {:>9.3}",
                    agg.family.name(),
                    agg.n,
                    agg.mean_posterior_true,
                    agg.median_posterior_true,
                    agg.map_rate
                );
            }
            match report.delta_star {
                Some(gap) => println!("population log gap: {gap}"),
                None => println!("population log gap: undefined (empty true graph)"),
            }
            if let Some(dir) = &cli.out {
                eprintln!("wrote report.json and runs.csv to {}", dir.display());
            }
            Ok(())
        }
    }
}

fn load_dataset(path: &Path, header: bool, center: bool) -> Result<Dataset, Error> {
    load_csv(path, header, center)
}

/// Parent cap default: unrestricted for small p, five beyond eight variables.
fn dp_default_cap(p: usize) -> usize {
    if p > 8 {
        (p - 1).min(5)
    } else {
        p - 1
    }
}

fn run_dp(dataset: &Dataset, max_parents: Option<usize>) -> Result<SearchResult, Error> {
    let p = dataset.p();
    dp_size_check(p)?;
    let cap = max_parents.unwrap_or_else(|| dp_default_cap(p)).min(p - 1);
    let table = NodeScoreTable::build(dataset, cap)?;
    exact_dp_bic(&table, cap)
}

fn parse_criterion(text: Option<&str>, g_policy: GPolicy, n: usize) -> Result<Criterion, Error> {
    match text.unwrap_or("bic") {
        "bic" => Ok(Criterion::Bic),
        "marginal" | "log-marginal" => Ok(Criterion::LogMarginal {
            g: g_policy.resolve(n),
        }),
        other => Err(Error::InvalidInput(format!(
            "unknown criterion `{other}` (expected `bic` or `marginal`)"
        ))),
    }
}

fn rank_posterior(
    dataset: &Dataset,
    prior: DagPrior,
    g_policy: GPolicy,
    cap: usize,
    top: Option<usize>,
    out: Option<&Path>,
) -> Result<(), Error> {
    let g = g_policy.resolve(dataset.n());
    let result = posterior_over_dags(dataset, prior, g, cap)?;
    let take = top
        .unwrap_or(result.entries().len())
        .min(result.entries().len());
    println!(
        "{:>4} {:>12} {:>14} {:>10}  edges",
        "rank", "posterior", "log marginal", "log prior"
    );
    for (i, entry) in result.entries()[..take].iter().enumerate() {
        println!(
            "{:>4} {:>12.6} {:>14.4} {:>10.4}  {:?}",
            i + 1,
            entry.posterior,
            entry.log_marginal,
            entry.log_prior,
            result.dag_of(entry).edges()
        );
    }
    if take < result.entries().len() {
        println!("  ... {} more", result.entries().len() - take);
    }
    let mut json = result.to_json(top);
    json["centered"] = serde_json::Value::Bool(dataset.is_centered());
    write_or_print(out, &json)
}

fn print_search_result(result: &SearchResult) {
    println!("method:     {:?}", result.method);
    println!("best score: {}", result.best_score);
    println!("optima:     {}", result.best.len());
    for dag in result.best.iter().take(5) {
        println!("    edges {:?}", dag.edges());
    }
    println!(
        "scored {} candidates in {} ms",
        result.stats.scored, result.stats.wall_ms
    );
}

fn write_or_print(out: Option<&Path>, value: &serde_json::Value) -> Result<(), Error> {
    match out {
        Some(path) => {
            write_json(path, value)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}
