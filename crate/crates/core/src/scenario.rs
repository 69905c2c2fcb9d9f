//! Problem data and its JSON file format.
//!
//! Matrices are stored row-major in files and converted to `nalgebra`
//! matrices on load. Destination indices are 0-based everywhere.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::TimeGrid;

/// RNG streams derived from one scenario seed.
pub(crate) mod streams {
    pub const POPULATION_STATES: u64 = 0;
    pub const POPULATION_TYPES: u64 = 1;
    pub const MEAN_FIELD_MEASURE: u64 = 2;
}

pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingMode {
    Cooperative,
    /// Mean-field tracking of `Z x̄` by selfish agents. Provided only to
    /// compare against the cooperative solution.
    Noncooperative,
}

impl CouplingMode {
    pub fn label(self) -> &'static str {
        match self {
            CouplingMode::Cooperative => "coop",
            CouplingMode::Noncooperative => "noncoop",
        }
    }
}

/// Strength `q` and shape `Z` of the social term `q/2 |x_i - Z x^(N)|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSpec {
    pub q: f64,
    pub z: DMatrix<f64>,
    pub mode: CouplingMode,
}

impl CouplingSpec {
    pub fn new(q: f64, z: DMatrix<f64>, mode: CouplingMode) -> Self {
        Self { q, z, mode }
    }

    /// `L = ZᵀZ - Z - Zᵀ`.
    pub fn l_matrix(&self) -> DMatrix<f64> {
        let zt = self.z.transpose();
        &zt * &self.z - &self.z - zt
    }

    /// Matrix `K` of the linear term `q x̄ᵀ K x` in the generic agent's
    /// running cost: `L` when cooperating, `-Zᵀ` otherwise.
    pub fn cost_matrix(&self) -> DMatrix<f64> {
        match self.mode {
            CouplingMode::Cooperative => self.l_matrix(),
            CouplingMode::Noncooperative => -self.z.transpose(),
        }
    }

    pub fn with_mode(&self, mode: CouplingMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    pub fn with_q(&self, q: f64) -> Self {
        Self { q, ..self.clone() }
    }
}

/// One type `θ = (A, B, r, M_1..M_l)` with its probability mass.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTypeAtom {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub r: f64,
    pub terminal_weights: Vec<f64>,
    pub weight: f64,
}

impl AgentTypeAtom {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, r: f64, terminal_weights: Vec<f64>) -> Self {
        Self {
            a,
            b,
            r,
            terminal_weights,
            weight: 1.0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `B Bᵀ / r`.
    pub fn input_gain(&self) -> DMatrix<f64> {
        &self.b * self.b.transpose() / self.r
    }

    pub fn has_uniform_terminal_weights(&self) -> bool {
        self.terminal_weights
            .windows(2)
            .all(|w| w[0] == w[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialDistribution {
    Gaussian {
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
    },
    Points(Vec<DVector<f64>>),
}

impl InitialDistribution {
    pub fn dim(&self) -> usize {
        match self {
            InitialDistribution::Gaussian { mean, .. } => mean.len(),
            InitialDistribution::Points(points) => points[0].len(),
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        match self {
            InitialDistribution::Gaussian { mean, .. } => mean.clone(),
            InitialDistribution::Points(points) => {
                let mut sum = DVector::zeros(points[0].len());
                for p in points {
                    sum += p;
                }
                sum / points.len() as f64
            }
        }
    }

    /// `E |x0|^2`.
    pub fn second_moment(&self) -> f64 {
        match self {
            InitialDistribution::Gaussian { mean, covariance } => {
                mean.norm_squared() + covariance.trace()
            }
            InitialDistribution::Points(points) => {
                points.iter().map(|p| p.norm_squared()).sum::<f64>() / points.len() as f64
            }
        }
    }

    /// Discrete measure used by the mean-field operator: the point list
    /// itself, or a seeded Monte Carlo sample of a Gaussian.
    pub fn measure(&self, samples: usize, seed: u64) -> EmpiricalMeasure {
        match self {
            InitialDistribution::Points(points) => EmpiricalMeasure::from_points(points),
            InitialDistribution::Gaussian { mean, covariance } => {
                let mut rng = seeded_rng(seed, streams::MEAN_FIELD_MEASURE);
                let factor = symmetric_sqrt(covariance);
                let n = mean.len();
                let mut coords = Vec::with_capacity(samples * n);
                for _ in 0..samples {
                    let x = gaussian_draw(mean, &factor, &mut rng);
                    coords.extend(x.iter());
                }
                EmpiricalMeasure::uniform(n, coords)
            }
        }
    }
}

pub(crate) fn gaussian_draw(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    mean + factor * z
}

/// Symmetric square root of a positive semidefinite matrix.
pub(crate) fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Equally weighted points stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    coords: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn uniform(dim: usize, coords: Vec<f64>) -> Self {
        assert!(dim > 0 && coords.len().is_multiple_of(dim) && !coords.is_empty());
        Self { dim, coords }
    }

    pub fn from_points(points: &[DVector<f64>]) -> Self {
        let dim = points[0].len();
        Self::uniform(dim, points.iter().flat_map(|p| p.iter().copied()).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn mass(&self) -> f64 {
        1.0 / self.len() as f64
    }
}

/// Fixed-point and enumeration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub mc_samples: usize,
    pub enumeration_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 200,
            damping: 0.5,
            mc_samples: 10_000,
            enumeration_cap: 4096,
        }
    }
}

/// Everything needed to pose the finite and the limiting problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid: TimeGrid,
    pub coupling: CouplingSpec,
    pub destinations: Vec<DVector<f64>>,
    pub atoms: Vec<AgentTypeAtom>,
    pub initial: InitialDistribution,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Scenario {
    pub fn state_dim(&self) -> usize {
        self.coupling.z.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.atoms[0].input_dim()
    }

    pub fn destination_count(&self) -> usize {
        self.destinations.len()
    }

    pub fn with_coupling(&self, coupling: CouplingSpec) -> Self {
        Self {
            coupling,
            ..self.clone()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::validation("scenario", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Validation {
            field: "scenario".into(),
            message: e.to_string(),
        })?;
        file.into_scenario()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScenarioFile::from(self)).expect("scenario serializes")
    }

    /// Checks every cross-field constraint of the file format.
    pub fn validate(&self) -> Result<()> {
        ScenarioFile::from(self).into_scenario().map(|_| ())
    }

    /// Two-dimensional binary choice used throughout the examples: a lightly
    /// damped double integrator choosing between `(-10, 0)` and `(10, 0)`
    /// from `N((-5, 10), 15 I)`, with `r = 10`, `M = 1200`, `T = 2`,
    /// `Z = 3.5 I`.
    pub fn two_site_example(q: f64, mode: CouplingMode, steps: usize) -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.02, -0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.3]);
        Scenario {
            grid: TimeGrid::new(2.0, steps).expect("valid grid"),
            coupling: CouplingSpec::new(q, DMatrix::identity(2, 2) * 3.5, mode),
            destinations: vec![
                DVector::from_vec(vec![-10.0, 0.0]),
                DVector::from_vec(vec![10.0, 0.0]),
            ],
            atoms: vec![AgentTypeAtom::new(a, b, 10.0, vec![1200.0, 1200.0])],
            initial: InitialDistribution::Gaussian {
                mean: DVector::from_vec(vec![-5.0, 10.0]),
                covariance: DMatrix::identity(2, 2) * 15.0,
            },
            solver: SolverConfig::default(),
            seed: 2016,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomFile {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub r: f64,
    pub m: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialFile {
    Gaussian { mean: Vec<f64>, covariance: Vec<f64> },
    Points { points: Vec<Vec<f64>> },
}

/// On-disk scenario: explicit dimensions, row-major matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    pub q: f64,
    pub z: Vec<f64>,
    pub destinations: Vec<Vec<f64>>,
    pub mode: CouplingMode,
    pub atoms: Vec<AtomFile>,
    pub initial: InitialFile,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_steps() -> usize {
    1000
}

fn check_len(field: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::validation(
            field,
            format!("expected {want} entries, found {got}"),
        ));
    }
    Ok(())
}

fn check_finite(field: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(field, "contains a non-finite number"));
    }
    Ok(())
}

fn row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario> {
        let (n, m, l) = (self.n, self.m, self.l);
        if n == 0 || m == 0 || l == 0 {
            return Err(Error::validation("n/m/l", "dimensions must be positive"));
        }
        let grid = TimeGrid::new(self.horizon, self.steps)?;
        if !(self.q.is_finite() && self.q >= 0.0) {
            return Err(Error::validation("q", "must be finite and nonnegative"));
        }
        check_len("z", self.z.len(), n * n)?;
        check_finite("z", &self.z)?;

        check_len("destinations", self.destinations.len(), l)?;
        let mut destinations = Vec::with_capacity(l);
        for (j, p) in self.destinations.iter().enumerate() {
            let field = format!("destinations[{j}]");
            check_len(&field, p.len(), n)?;
            check_finite(&field, p)?;
            if self.destinations[..j].contains(p) {
                return Err(Error::validation(field, "duplicates an earlier destination"));
            }
            destinations.push(DVector::from_column_slice(p));
        }

        if self.atoms.is_empty() {
            return Err(Error::validation("atoms", "at least one type atom is required"));
        }
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for (i, atom) in self.atoms.iter().enumerate() {
            let field = |name: &str| format!("atoms[{i}].{name}");
            check_len(&field("a"), atom.a.len(), n * n)?;
            check_finite(&field("a"), &atom.a)?;
            check_len(&field("b"), atom.b.len(), n * m)?;
            check_finite(&field("b"), &atom.b)?;
            if !(atom.r.is_finite() && atom.r > 0.0) {
                return Err(Error::validation(field("r"), "must be positive"));
            }
            check_len(&field("m"), atom.m.len(), l)?;
            if atom.m.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                return Err(Error::validation(field("m"), "terminal weights must be positive"));
            }
            if !(0.0..=1.0).contains(&atom.weight) {
                return Err(Error::validation(field("weight"), "must lie in [0, 1]"));
            }
            atoms.push(AgentTypeAtom {
                a: row_major(n, n, &atom.a),
                b: row_major(n, m, &atom.b),
                r: atom.r,
                terminal_weights: atom.m.clone(),
                weight: atom.weight,
            });
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::validation(
                "atoms.weight",
                format!("weights sum to {total}, expected 1"),
            ));
        }

        let initial = match &self.initial {
            InitialFile::Gaussian { mean, covariance } => {
                check_len("initial.mean", mean.len(), n)?;
                check_finite("initial.mean", mean)?;
                check_len("initial.covariance", covariance.len(), n * n)?;
                check_finite("initial.covariance", covariance)?;
                let cov = row_major(n, n, covariance);
                let scale = cov.amax().max(1.0);
                if (&cov - cov.transpose()).amax() > 1e-12 * scale {
                    return Err(Error::validation("initial.covariance", "must be symmetric"));
                }
                let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
                if min_eig < -1e-12 * scale {
                    return Err(Error::validation(
                        "initial.covariance",
                        format!("must be positive semidefinite (eigenvalue {min_eig})"),
                    ));
                }
                InitialDistribution::Gaussian {
                    mean: DVector::from_column_slice(mean),
                    covariance: cov,
                }
            }
            InitialFile::Points { points } => {
                if points.is_empty() {
                    return Err(Error::validation("initial.points", "must not be empty"));
                }
                let mut out = Vec::with_capacity(points.len());
                for (k, p) in points.iter().enumerate() {
                    let field = format!("initial.points[{k}]");
                    check_len(&field, p.len(), n)?;
                    check_finite(&field, p)?;
                    out.push(DVector::from_column_slice(p));
                }
                InitialDistribution::Points(out)
            }
        };

        let s = self.solver;
        if !(s.tol.is_finite() && s.tol > 0.0) {
            return Err(Error::validation("solver.tol", "must be positive"));
        }
        if s.max_iter == 0 {
            return Err(Error::validation("solver.max_iter", "must be positive"));
        }
        if !(s.damping > 0.0 && s.damping <= 1.0) {
            return Err(Error::validation("solver.damping", "must lie in (0, 1]"));
        }
        if s.mc_samples == 0 {
            return Err(Error::validation("solver.mc_samples", "must be positive"));
        }
        if s.enumeration_cap == 0 {
            return Err(Error::validation("solver.enumeration_cap", "must be positive"));
        }

        Ok(Scenario {
            grid,
            coupling: CouplingSpec::new(self.q, row_major(n, n, &self.z), self.mode),
            destinations,
            atoms,
            initial,
            solver: s,
            seed: self.seed,
        })
    }
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        ScenarioFile {
            n: s.state_dim(),
            m: s.input_dim(),
            l: s.destination_count(),
            horizon: s.grid.horizon(),
            steps: s.grid.steps(),
            q: s.coupling.q,
            z: to_row_major(&s.coupling.z),
            destinations: s.destinations.iter().map(|p| p.as_slice().to_vec()).collect(),
            mode: s.coupling.mode,
            atoms: s
                .atoms
                .iter()
                .map(|a| AtomFile {
                    a: to_row_major(&a.a),
                    b: to_row_major(&a.b),
                    r: a.r,
                    m: a.terminal_weights.clone(),
                    weight: a.weight,
                })
                .collect(),
            initial: match &s.initial {
                InitialDistribution::Gaussian { mean, covariance } => InitialFile::Gaussian {
                    mean: mean.as_slice().to_vec(),
                    covariance: to_row_major(covariance),
                },
                InitialDistribution::Points(points) => InitialFile::Points {
                    points: points.iter().map(|p| p.as_slice().to_vec()).collect(),
                },
            },
            solver: s.solver,
            seed: s.seed,
        }
    }
}

/// One member of a finite population.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub atom: AgentTypeAtom,
    pub x0: DVector<f64>,
}

impl Agent {
    pub fn new(atom: AgentTypeAtom, x0: DVector<f64>) -> Self {
        Self { atom, x0 }
    }
}

/// File form of an [`Agent`]: index into the scenario's atoms plus `x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub atom: usize,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentsFile {
    pub agents: Vec<AgentSpec>,
}

impl AgentsFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::validation("agents", format!("cannot read {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| Error::validation("agents", e.to_string()))
    }

    pub fn resolve(&self, scenario: &Scenario) -> Result<Vec<Agent>> {
        if self.agents.is_empty() {
            return Err(Error::validation("agents", "must not be empty"));
        }
        self.agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let atom = scenario.atoms.get(a.atom).ok_or_else(|| {
                    Error::validation(format!("agents[{i}].atom"), "no such type atom")
                })?;
                check_len(&format!("agents[{i}].x0"), a.x0.len(), scenario.state_dim())?;
                Ok(Agent::new(atom.clone(), DVector::from_column_slice(&a.x0)))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_site_json() -> String {
        Scenario::two_site_example(40.0, CouplingMode::Cooperative, 2000).to_json()
    }

    #[test]
    fn l_matrix_examples() {
        let c = CouplingSpec::new(1.0, DMatrix::identity(2, 2) * 3.5, CouplingMode::Cooperative);
        assert_eq!(c.l_matrix(), DMatrix::identity(2, 2) * 5.25);
        let c = CouplingSpec::new(1.0, DMatrix::identity(2, 2), CouplingMode::Cooperative);
        assert_eq!(c.l_matrix(), -DMatrix::identity(2, 2));
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let c = CouplingSpec::new(1.0, z.clone(), CouplingMode::Noncooperative);
        assert_eq!(c.cost_matrix(), -z.transpose());
        assert_eq!(c.l_matrix(), c.l_matrix().transpose());
    }

    #[test]
    fn two_site_file_parses() {
        let s = Scenario::from_json(&two_site_json()).unwrap();
        assert_eq!(s.state_dim(), 2);
        assert_eq!(s.grid.steps(), 2000);
        assert_eq!(s.atoms[0].a[(1, 0)], 0.02);
    }

    fn expect_field(edit: impl FnOnce(&mut ScenarioFile), field: &str) {
        let mut file = ScenarioFile::from(&Scenario::two_site_example(
            40.0,
            CouplingMode::Cooperative,
            2000,
        ));
        edit(&mut file);
        let json = serde_json::to_string(&file).unwrap();
        match Scenario::from_json(&json) {
            Err(Error::Validation { field: f, .. }) => assert!(f.contains(field), "{f}"),
            other => panic!("expected validation error on {field}, got {other:?}"),
        }
    }

    #[test]
    fn validation_names_the_field() {
        expect_field(|f| f.atoms[0].weight = 0.5, "atoms.weight");
        expect_field(|f| f.initial = InitialFile::Gaussian {
            mean: vec![0.0, 0.0],
            covariance: vec![1.0, 0.5, 0.0, 1.0],
        }, "initial.covariance");
        expect_field(|f| f.initial = InitialFile::Gaussian {
            mean: vec![0.0, 0.0],
            covariance: vec![-1.0, 0.0, 0.0, 1.0],
        }, "initial.covariance");
        expect_field(|f| f.atoms[0].r = 0.0, "atoms[0].r");
        expect_field(|f| f.destinations[1] = f.destinations[0].clone(), "destinations[1]");
        expect_field(|f| f.z.pop().map(|_| ()).unwrap_or(()), "z");
        expect_field(|f| f.solver.damping = 0.0, "solver.damping");
        expect_field(|f| f.horizon = -1.0, "horizon");
    }

    fn arb_scenario() -> impl Strategy<Value = ScenarioFile> {
        (
            1usize..=3,
            1usize..=2,
            1usize..=3,
            0.1f64..5.0,
            1usize..500,
            0.0f64..50.0,
            any::<u64>(),
            prop::bool::ANY,
        )
            .prop_flat_map(|(n, m, l, horizon, steps, q, seed, gaussian)| {
                let floats = |len| prop::collection::vec(-100.0f64..100.0, len);
                (
                    floats(n * n),
                    prop::collection::vec(floats(n), l),
                    floats(n * n),
                    floats(n * m),
                    prop::collection::vec(0.5f64..2000.0, l),
                    floats(n),
                    prop::collection::vec(floats(n), 1..4),
                )
                    .prop_map(move |(z, dest, a, b, mw, mean, pts)| {
                        let initial = if gaussian {
                            let mut cov = vec![0.0; n * n];
                            for i in 0..n {
                                cov[i * n + i] = 1.0 + i as f64;
                            }
                            InitialFile::Gaussian { mean, covariance: cov }
                        } else {
                            InitialFile::Points { points: pts }
                        };
                        let destinations = dest
                            .into_iter()
                            .enumerate()
                            .map(|(j, mut p)| {
                                p[0] = 1000.0 * j as f64 + p[0] * 1e-3;
                                p
                            })
                            .collect();
                        ScenarioFile {
                            n,
                            m,
                            l,
                            horizon,
                            steps,
                            q,
                            z,
                            destinations,
                            mode: CouplingMode::Cooperative,
                            atoms: vec![AtomFile { a, b, r: 0.7, m: mw, weight: 1.0 }],
                            initial,
                            solver: SolverConfig::default(),
                            seed,
                        }
                    })
            })
    }

    proptest! {
        #[test]
        fn file_round_trip(file in arb_scenario()) {
            let text = serde_json::to_string(&file).unwrap();
            let parsed = Scenario::from_json(&text).unwrap();
            let again = Scenario::from_json(&parsed.to_json()).unwrap();
            prop_assert_eq!(&parsed, &again);
            prop_assert_eq!(ScenarioFile::from(&again), file);
        }
    }

    #[test]
    fn gaussian_measure_is_seeded() {
        let s = Scenario::two_site_example(0.0, CouplingMode::Cooperative, 10);
        let a = s.initial.measure(500, 7);
        let b = s.initial.measure(500, 7);
        let c = s.initial.measure(500, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 500);
    }
}
