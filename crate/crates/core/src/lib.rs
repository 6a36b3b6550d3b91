//! Structure learning for linear structural equation models with equal error
//! variances: exact DAG enumeration, SEM simulation, population-level
//! identifiability verification, g-prior marginal-likelihood and BIC scoring,
//! and exhaustive / dynamic-programming / greedy search.

pub mod error;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod population;
pub mod scoring;
pub mod search;
pub mod sem;

pub use error::{Error, Result};
pub use experiment::{run_consistency_experiment, ConsistencyReport, ExperimentConfig, GPolicy};
pub use graph::{enumerate_dags, is_acyclic, CausalOrder, Dag};
pub use population::{verify_identifiability, IdentifiabilityReport, PopulationScore};
pub use scoring::{posterior_over_dags, DagPrior, DagScore, NodeScoreTable, PosteriorResult};
pub use search::{exact_dp_bic, exhaustive_best, greedy_hill_climb, Criterion, SearchResult};
pub use sem::{Dataset, ErrorFamily, SemSpec};
