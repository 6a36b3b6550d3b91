//! The data-generating model: a linear recursive SEM over a DAG where every
//! node equals a linear combination of its parents plus independent,
//! mean-zero noise of common variance `sigma2`.
//!
//! Noise draws use ChaCha12 with one substream per node (the stream field
//! carries the node index), so columns are reproducible across platforms and
//! appending downstream nodes never perturbs existing columns.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Dag;

const NOISE_TAG: u64 = 0x6e6f_6973_655f_636f;
const COEF_TAG: u64 = 0x636f_6566_5f64_7261;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fixed-purpose, per-stream generator: `tag` separates uses of the same user
/// seed, `stream` separates columns within one use.
pub(crate) fn substream(seed: u64, tag: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(seed ^ tag));
    rng.set_stream(stream);
    rng
}

/// Deterministic seed mixer for derived jobs (experiment cells, restarts).
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3, |acc, &x| {
        splitmix64(acc ^ splitmix64(x))
    })
}

/// Mean-zero noise family, parameterized so the variance is exactly `sigma2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorFamily {
    Gaussian,
    Laplace,
    Uniform,
}

impl ErrorFamily {
    pub const ALL: [ErrorFamily; 3] = [
        ErrorFamily::Gaussian,
        ErrorFamily::Laplace,
        ErrorFamily::Uniform,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ErrorFamily::Gaussian => "gaussian",
            ErrorFamily::Laplace => "laplace",
            ErrorFamily::Uniform => "uniform",
        }
    }

    /// Draws `n` iid noise values with variance `sigma2`.
    fn sample_column(&self, sigma2: f64, n: usize, rng: &mut ChaCha12Rng) -> DVector<f64> {
        match self {
            ErrorFamily::Gaussian => {
                let dist = Normal::new(0.0, sigma2.sqrt()).expect("valid sigma");
                DVector::from_iterator(n, (0..n).map(|_| dist.sample(rng)))
            }
            ErrorFamily::Laplace => {
                // Difference of two unit exponentials has a Laplace law with
                // scale b, variance 2 b^2.
                let b = (sigma2 / 2.0).sqrt();
                let exp = Exp::new(1.0).expect("valid rate");
                DVector::from_iterator(n, (0..n).map(|_| b * (exp.sample(rng) - exp.sample(rng))))
            }
            ErrorFamily::Uniform => {
                let half_width = (3.0 * sigma2).sqrt();
                let dist = Uniform::new_inclusive(-half_width, half_width).expect("valid bounds");
                DVector::from_iterator(n, (0..n).map(|_| dist.sample(rng)))
            }
        }
    }
}

impl std::str::FromStr for ErrorFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(ErrorFamily::Gaussian),
            "laplace" => Ok(ErrorFamily::Laplace),
            "uniform" => Ok(ErrorFamily::Uniform),
            other => Err(Error::InvalidInput(format!(
                "unknown error family `{other}`"
            ))),
        }
    }
}

/// A fully specified data-generating SEM: the true DAG, one coefficient per
/// edge (aligned with each node's sorted parent set), the common error
/// variance, and the noise family.
#[derive(Debug, Clone, PartialEq)]
pub struct SemSpec {
    graph: Dag,
    coefficients: Vec<Vec<f64>>,
    sigma2: f64,
    family: ErrorFamily,
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct SemSpecJson {
    p: usize,
    edges: Vec<(usize, usize)>,
    coefficients: Vec<Vec<f64>>,
    sigma2: f64,
    family: ErrorFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl SemSpec {
    /// `coefficients[j][i]` is the effect of the i-th entry of the sorted
    /// parent set of node `j`. Every coefficient must be non-zero and finite.
    pub fn new(
        graph: Dag,
        coefficients: Vec<Vec<f64>>,
        sigma2: f64,
        family: ErrorFamily,
    ) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidInput(
                "sigma2 must be positive and finite".into(),
            ));
        }
        if coefficients.len() != graph.node_count() {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficient vectors, got {}",
                graph.node_count(),
                coefficients.len()
            )));
        }
        for (j, coef) in coefficients.iter().enumerate() {
            if coef.len() != graph.parents(j).len() {
                return Err(Error::InvalidInput(format!(
                    "node {j} has {} parents but {} coefficients",
                    graph.parents(j).len(),
                    coef.len()
                )));
            }
            if coef.iter().any(|b| *b == 0.0 || !b.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "coefficients of node {j} must be non-zero and finite"
                )));
            }
        }
        Ok(SemSpec {
            graph,
            coefficients,
            sigma2,
            family,
            seed: None,
        })
    }

    /// Random spec over a given true graph: coefficient magnitudes drawn
    /// uniformly from `[lo, hi]` with a fair random sign, so `|beta| >= lo > 0`.
    pub fn random(
        graph: Dag,
        coef_lo: f64,
        coef_hi: f64,
        sigma2: f64,
        family: ErrorFamily,
        seed: u64,
    ) -> Result<Self> {
        if !(coef_lo > 0.0 && coef_hi >= coef_lo && coef_hi.is_finite()) {
            return Err(Error::InvalidInput(
                "coefficient range must satisfy 0 < lo <= hi (zero effects are not allowed)".into(),
            ));
        }
        let magnitude = Uniform::new_inclusive(coef_lo, coef_hi).expect("valid range");
        let coefficients = (0..graph.node_count())
            .map(|j| {
                let mut rng = substream(seed, COEF_TAG, j as u64);
                graph
                    .parents(j)
                    .iter()
                    .map(|_| {
                        let m = magnitude.sample(&mut rng);
                        if rng.random_bool(0.5) {
                            m
                        } else {
                            -m
                        }
                    })
                    .collect()
            })
            .collect();
        let mut spec = SemSpec::new(graph, coefficients, sigma2, family)?;
        spec.seed = Some(seed);
        Ok(spec)
    }

    pub fn graph(&self) -> &Dag {
        &self.graph
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Coefficients of node `j`, aligned with `graph().parents(j)`.
    pub fn coefficients(&self, j: usize) -> &[f64] {
        &self.coefficients[j]
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn family(&self) -> ErrorFamily {
        self.family
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_family(mut self, family: ErrorFamily) -> Self {
        self.family = family;
        self
    }

    /// Coefficient matrix `B` with `B[j, k]` the effect of `k` on `j`.
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        let p = self.node_count();
        let mut b = DMatrix::zeros(p, p);
        for j in 0..p {
            for (i, &k) in self.graph.parents(j).iter().enumerate() {
                b[(j, k)] = self.coefficients[j][i];
            }
        }
        b
    }

    /// Exact covariance implied by the model: `sigma2 (I-B)^{-1} (I-B)^{-T}`,
    /// symmetric positive definite for every acyclic coefficient matrix.
    pub fn implied_covariance(&self) -> DMatrix<f64> {
        let p = self.node_count();
        let i_minus_b = DMatrix::identity(p, p) - self.coefficient_matrix();
        let inv = i_minus_b
            .lu()
            .try_inverse()
            .expect("I - B is unit-triangular under a topological permutation");
        let mut cov = &inv * inv.transpose() * self.sigma2;
        // Enforce exact symmetry against round-off.
        for a in 0..p {
            for b in (a + 1)..p {
                let avg = 0.5 * (cov[(a, b)] + cov[(b, a)]);
                cov[(a, b)] = avg;
                cov[(b, a)] = avg;
            }
        }
        cov
    }

    /// Draws `n` iid observations: noise per node from its own substream of
    /// `seed`, then the triangular system solved in topological order.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InvalidInput("sample count must be positive".into()));
        }
        let p = self.node_count();
        let mut columns: Vec<DVector<f64>> = (0..p)
            .map(|j| {
                let mut rng = substream(seed, NOISE_TAG, j as u64);
                self.family.sample_column(self.sigma2, n, &mut rng)
            })
            .collect();
        let order = self.graph.topological_order();
        for &j in order.as_slice() {
            let parents = self.graph.parents(j).to_vec();
            for (i, &k) in parents.iter().enumerate() {
                let parent_col = columns[k].clone();
                columns[j].axpy(self.coefficients[j][i], &parent_col, 1.0);
            }
        }
        Dataset::new(DMatrix::from_columns(&columns))
    }
}

impl Serialize for SemSpec {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        SemSpecJson {
            p: self.node_count(),
            edges: self.graph.edges(),
            coefficients: self.coefficients.clone(),
            sigma2: self.sigma2,
            family: self.family,
            seed: self.seed,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SemSpec {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = SemSpecJson::deserialize(deserializer)?;
        let graph = Dag::from_edges(raw.p, &raw.edges).map_err(D::Error::custom)?;
        let mut spec = SemSpec::new(graph, raw.coefficients, raw.sigma2, raw.family)
            .map_err(D::Error::custom)?;
        spec.seed = raw.seed;
        Ok(spec)
    }
}

/// An `n x p` observation matrix with optional column labels. Entries are
/// finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: DMatrix<f64>,
    column_names: Option<Vec<String>>,
    centered: bool,
}

impl Dataset {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidInput(
                "dataset must have at least one row and column".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "dataset contains non-finite entries".into(),
            ));
        }
        Ok(Dataset {
            values,
            column_names: None,
            centered: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput(
                "dataset must have at least one row".into(),
            ));
        }
        let p = rows[0].len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidInput("rows have unequal lengths".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Dataset::new(DMatrix::from_row_slice(rows.len(), p, &flat))
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::InvalidInput(format!(
                "{} column names for {} columns",
                names.len(),
                self.p()
            )));
        }
        self.column_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.values.column(j).into_owned()
    }

    /// The `n x k` block of the listed columns, in the given order.
    pub fn columns(&self, which: &[usize]) -> DMatrix<f64> {
        let mut block = DMatrix::zeros(self.n(), which.len());
        for (i, &j) in which.iter().enumerate() {
            block.set_column(i, &self.values.column(j));
        }
        block
    }

    /// Subtracts column means in place and flags the dataset as centered.
    pub fn center(&mut self) {
        for mut col in self.values.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        self.centered = true;
    }

    /// Uncentered second-moment matrix `X^T X / n`; for the zero-mean model
    /// this is the sample analogue of the covariance.
    pub fn second_moment_matrix(&self) -> DMatrix<f64> {
        let n = self.n() as f64;
        self.values.transpose() * &self.values / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::random_dag;

    fn chain3_spec(family: ErrorFamily) -> SemSpec {
        let dag = Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        SemSpec::new(dag, vec![vec![], vec![1.0], vec![1.0]], 1.0, family).unwrap()
    }

    // Hand algebra for the unit chains: (I-B)^{-1} is lower-triangular of
    // ones, so cov(a, b) = min(a, b) + 1.
    const CHAIN2_COV: [[f64; 2]; 2] = [[1.0, 1.0], [1.0, 2.0]];
    const CHAIN3_COV: [[f64; 3]; 3] = [[1.0, 1.0, 1.0], [1.0, 2.0, 2.0], [1.0, 2.0, 3.0]];

    #[test]
    fn implied_covariance_matches_closed_forms() {
        let chain2 = SemSpec::new(
            Dag::from_edges(2, &[(0, 1)]).unwrap(),
            vec![vec![], vec![1.0]],
            1.0,
            ErrorFamily::Gaussian,
        )
        .unwrap();
        let cov = chain2.implied_covariance();
        for a in 0..2 {
            for b in 0..2 {
                assert!((cov[(a, b)] - CHAIN2_COV[a][b]).abs() < 1e-12);
            }
        }

        let empty =
            SemSpec::new(Dag::empty(3), vec![vec![]; 3], 1.0, ErrorFamily::Gaussian).unwrap();
        assert_eq!(empty.implied_covariance(), DMatrix::identity(3, 3));

        let cov = chain3_spec(ErrorFamily::Gaussian).implied_covariance();
        for a in 0..3 {
            for b in 0..3 {
                assert!((cov[(a, b)] - CHAIN3_COV[a][b]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn implied_covariance_is_positive_definite_for_random_specs() {
        for seed in 0..30 {
            let mut rng = substream(seed, 0xabcd, 0);
            let dag = random_dag(4, 0.5, &mut rng);
            let spec = SemSpec::random(dag, 0.5, 2.0, 0.25, ErrorFamily::Gaussian, seed).unwrap();
            assert!(
                spec.implied_covariance().cholesky().is_some(),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn simulate_is_seed_deterministic() {
        let spec = chain3_spec(ErrorFamily::Laplace);
        let a = spec.simulate(3, 99).unwrap();
        let b = spec.simulate(3, 99).unwrap();
        assert_eq!(a, b);
        let c = spec.simulate(3, 100).unwrap();
        assert_ne!(a, c);
        assert!(spec.simulate(0, 1).is_err());
    }

    #[test]
    fn appending_a_downstream_node_preserves_existing_columns() {
        let spec2 = SemSpec::new(
            Dag::from_edges(2, &[(0, 1)]).unwrap(),
            vec![vec![], vec![1.5]],
            1.0,
            ErrorFamily::Gaussian,
        )
        .unwrap();
        let spec3 = SemSpec::new(
            Dag::from_edges(3, &[(0, 1), (0, 2), (1, 2)]).unwrap(),
            vec![vec![], vec![1.5], vec![0.5, -0.5]],
            1.0,
            ErrorFamily::Gaussian,
        )
        .unwrap();
        let d2 = spec2.simulate(50, 7).unwrap();
        let d3 = spec3.simulate(50, 7).unwrap();
        for j in 0..2 {
            assert_eq!(d2.column(j), d3.column(j), "column {j} perturbed");
        }
    }

    #[test]
    fn noise_families_have_requested_moments() {
        let n = 1_000_000usize;
        for family in ErrorFamily::ALL {
            for (i, &sigma2) in [0.25, 1.0, 4.0].iter().enumerate() {
                let mut rng = substream(2024 + i as u64, NOISE_TAG, 17);
                let draws = family.sample_column(sigma2, n, &mut rng);
                let mean = draws.mean();
                let var =
                    draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
                assert!(
                    mean.abs() <= 0.01 * sigma2.sqrt(),
                    "{family:?} sigma2={sigma2}: mean {mean}"
                );
                assert!(
                    (var / sigma2 - 1.0).abs() <= 0.02,
                    "{family:?} sigma2={sigma2}: var {var}"
                );
            }
        }
    }

    #[test]
    fn sample_moments_converge_to_implied_covariance() {
        let n = 100_000usize;

        // Independent noise: second moments near the identity.
        let empty =
            SemSpec::new(Dag::empty(3), vec![vec![]; 3], 1.0, ErrorFamily::Gaussian).unwrap();
        let s = empty.simulate(n, 5).unwrap().second_moment_matrix();
        for a in 0..3 {
            for b in 0..3 {
                let target = if a == b { 1.0 } else { 0.0 };
                assert!(
                    (s[(a, b)] - target).abs() <= 0.05,
                    "({a},{b}): {}",
                    s[(a, b)]
                );
            }
        }

        // Uniform noise through the chain: matches the closed-form covariance.
        let s = chain3_spec(ErrorFamily::Uniform)
            .simulate(n, 6)
            .unwrap()
            .second_moment_matrix();
        for a in 0..3 {
            for b in 0..3 {
                assert!((s[(a, b)] - CHAIN3_COV[a][b]).abs() <= 0.05);
            }
        }

        // Loose ten-sigma bound around every entry for a gaussian chain.
        let spec = chain3_spec(ErrorFamily::Gaussian);
        let cov = spec.implied_covariance();
        let max_var = (0..3).map(|j| cov[(j, j)]).fold(0.0f64, f64::max);
        let tol = 10.0 * (max_var * max_var / n as f64).sqrt();
        let s = spec.simulate(n, 8).unwrap().second_moment_matrix();
        for a in 0..3 {
            for b in 0..3 {
                assert!((s[(a, b)] - cov[(a, b)]).abs() <= tol);
            }
        }
    }

    #[test]
    fn random_spec_honors_magnitude_bounds() {
        let dag = Dag::from_edges(2, &[(0, 1)]).unwrap();
        let degenerate =
            SemSpec::random(dag.clone(), 1.0, 1.0, 1.0, ErrorFamily::Gaussian, 3).unwrap();
        assert_eq!(degenerate.coefficients(1)[0].abs(), 1.0);

        let again = SemSpec::random(dag.clone(), 1.0, 1.0, 1.0, ErrorFamily::Gaussian, 3).unwrap();
        assert_eq!(degenerate, again);

        assert!(SemSpec::random(dag.clone(), 0.0, 1.0, 1.0, ErrorFamily::Gaussian, 3).is_err());
        assert!(SemSpec::random(dag.clone(), -0.5, 1.0, 1.0, ErrorFamily::Gaussian, 3).is_err());

        // Magnitudes stay inside [lo, hi] over many draws.
        let wide = Dag::from_edges(5, &[(0, 4), (1, 4), (2, 4), (3, 4)]).unwrap();
        for seed in 0..2500 {
            let spec =
                SemSpec::random(wide.clone(), 0.5, 2.0, 1.0, ErrorFamily::Gaussian, seed).unwrap();
            for b in spec.coefficients(4) {
                assert!((0.5..=2.0).contains(&b.abs()), "seed {seed}: {b}");
            }
        }
    }

    #[test]
    fn spec_validation_rejects_bad_inputs() {
        let dag = Dag::from_edges(2, &[(0, 1)]).unwrap();
        assert!(SemSpec::new(
            dag.clone(),
            vec![vec![], vec![0.0]],
            1.0,
            ErrorFamily::Gaussian
        )
        .is_err());
        assert!(SemSpec::new(
            dag.clone(),
            vec![vec![], vec![1.0]],
            0.0,
            ErrorFamily::Gaussian
        )
        .is_err());
        assert!(SemSpec::new(
            dag.clone(),
            vec![vec![], vec![1.0, 2.0]],
            1.0,
            ErrorFamily::Gaussian
        )
        .is_err());
        assert!(SemSpec::new(dag, vec![vec![]], 1.0, ErrorFamily::Gaussian).is_err());
    }

    #[test]
    fn sidecar_json_round_trip() {
        let spec = chain3_spec(ErrorFamily::Uniform).with_seed(11);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"family\":\"uniform\""));
        assert!(json.contains("\"seed\":11"));
        let back: SemSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);

        // A zero coefficient must be rejected on read as well.
        let bad =
            r#"{"p":2,"edges":[[0,1]],"coefficients":[[],[0.0]],"sigma2":1.0,"family":"gaussian"}"#;
        assert!(serde_json::from_str::<SemSpec>(bad).is_err());
    }

    #[test]
    fn dataset_centering_and_validation() {
        let mut d = Dataset::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        assert!(!d.is_centered());
        d.center();
        assert!(d.is_centered());
        assert_eq!(d.column(0).as_slice(), &[-1.0, 1.0]);

        assert!(Dataset::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(Dataset::from_rows(&[vec![f64::NAN]]).is_err());
        assert!(Dataset::from_rows(&[]).is_err());
    }
}
