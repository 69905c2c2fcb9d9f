//! Finite populations playing the decentralized mean-field strategies.
//!
//! Each agent picks the destination whose basin contains its initial state
//! and then follows the type-shared feedback of that `(atom, destination)`
//! bundle. Because the closed loop is affine in `x⁰`, every trajectory is
//! `Ξ(t)x⁰ + b(t)` with `Ξ`, `b` integrated once per bundle, so agents are
//! never integrated individually.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::Serialize;

use crate::centralized::exact_social_optimum;
use crate::error::{Error, Result};
use crate::meanfield::{find_fixed_point, MeanFieldSolution};
use crate::numerics::{trapezoid, SampledPath, TimeGrid};
use crate::riccati::RiccatiBundle;
use crate::scenario::{
    gaussian_draw, seeded_rng, streams, symmetric_sqrt, Agent, AgentTypeAtom, InitialDistribution,
    Scenario,
};

/// `N` agents drawn from a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSample {
    pub seed: u64,
    /// Type-atom index of each agent.
    pub atoms: Vec<usize>,
    pub x0: Vec<DVector<f64>>,
    pub empirical_mean: DVector<f64>,
    pub empirical_covariance: DMatrix<f64>,
    /// `(1/N) Σ |x⁰_i|²`. Recorded, not bounded.
    pub second_moment: f64,
    /// `"gaussian"` or `"points"`.
    pub distribution: &'static str,
}

impl PopulationSample {
    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    /// The sample as explicit agents, for the centralized solver.
    pub fn agents(&self, scenario: &Scenario) -> Vec<Agent> {
        self.atoms
            .iter()
            .zip(&self.x0)
            .map(|(&a, x)| Agent::new(scenario.atoms[a].clone(), x.clone()))
            .collect()
    }

    fn from_parts(seed: u64, atoms: Vec<usize>, x0: Vec<DVector<f64>>, distribution: &'static str) -> Self {
        let n = x0[0].len();
        let count = x0.len() as f64;
        let mut mean = DVector::zeros(n);
        for x in &x0 {
            mean += x;
        }
        mean /= count;
        let mut cov = DMatrix::zeros(n, n);
        for x in &x0 {
            let d = x - &mean;
            cov += &d * d.transpose();
        }
        cov /= count;
        let second_moment = x0.iter().map(|x| x.norm_squared()).sum::<f64>() / count;
        Self {
            seed,
            atoms,
            x0,
            empirical_mean: mean,
            empirical_covariance: cov,
            second_moment,
            distribution,
        }
    }
}

/// Draws `n` agents. Gaussian states come from one seeded stream and atom
/// indices from another; an explicit point list is dealt out cyclically
/// (agent `i` gets point `i mod len`), so `n` equal to a multiple of the
/// list length reproduces the list exactly.
pub fn sample_population(scenario: &Scenario, n: usize, seed: u64) -> Result<PopulationSample> {
    if n == 0 {
        return Err(Error::validation("n", "population size must be at least 1"));
    }
    let atoms = if scenario.atoms.len() == 1 {
        vec![0; n]
    } else {
        let weights: Vec<f64> = scenario.atoms.iter().map(|a| a.weight).collect();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::validation("atoms.weight", e.to_string()))?;
        let mut rng = seeded_rng(seed, streams::POPULATION_TYPES);
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    };
    let (x0, label) = match &scenario.initial {
        InitialDistribution::Gaussian { mean, covariance } => {
            let factor = symmetric_sqrt(covariance);
            let mut rng = seeded_rng(seed, streams::POPULATION_STATES);
            let x0: Vec<DVector<f64>> = (0..n).map(|_| gaussian_draw(mean, &factor, &mut rng)).collect();
            (x0, "gaussian")
        }
        InitialDistribution::Points(points) => {
            ((0..n).map(|i| points[i % points.len()].clone()).collect(), "points")
        }
    };
    Ok(PopulationSample::from_parts(seed, atoms, x0, label))
}

/// The closed loop of one bundle written as an affine map of `x⁰`:
/// `x(t_k) = Ξ_k x⁰ + b_k`, `u(t_k) = F_k x⁰ + g_k`.
#[derive(Debug, Clone)]
pub struct AffineResponse {
    pub transition: Vec<DMatrix<f64>>,
    pub offset: Vec<DVector<f64>>,
    pub gain: Vec<DMatrix<f64>>,
    pub feed: Vec<DVector<f64>>,
}

impl AffineResponse {
    pub fn from_bundle(bundle: &RiccatiBundle) -> Result<Self> {
        let xi = bundle.state_transition()?;
        let b = bundle.zero_state_response()?;
        let bt = bundle.b.transpose() * (-1.0 / bundle.r);
        let len = bundle.grid().len();
        let mut gain = Vec::with_capacity(len);
        let mut feed = Vec::with_capacity(len);
        for k in 0..len {
            let g = bundle.gamma.value(k);
            gain.push(&bt * g * xi.value(k));
            feed.push(&bt * (g * b.value(k) + bundle.beta.value(k)));
        }
        Ok(Self {
            transition: xi.into_values(),
            offset: b.into_values(),
            gain,
            feed,
        })
    }

    pub fn state(&self, k: usize, x0: &DVector<f64>) -> DVector<f64> {
        &self.transition[k] * x0 + &self.offset[k]
    }

    pub fn control(&self, k: usize, x0: &DVector<f64>) -> DVector<f64> {
        &self.gain[k] * x0 + &self.feed[k]
    }
}

/// Realized cost of one agent:
/// `∫ q/2|x - Zm|² + r/2|u|² dt + min_j M_j/2 |x(T) - p_j|²`, where
/// `coupled[k]` holds `Z m(t_k)` and `fill(k, x, u)` writes the agent's
/// state and control at grid point `k`.
fn agent_cost(
    scenario: &Scenario,
    atom: &AgentTypeAtom,
    coupled: &[DVector<f64>],
    mut fill: impl FnMut(usize, &mut DVector<f64>, &mut DVector<f64>),
) -> f64 {
    let grid = scenario.grid;
    let q = scenario.coupling.q;
    let mut x = DVector::zeros(scenario.state_dim());
    let mut u = DVector::zeros(scenario.input_dim());
    let mut running = Vec::with_capacity(grid.len());
    for (k, zm) in coupled.iter().enumerate() {
        fill(k, &mut x, &mut u);
        let mut c = 0.5 * atom.r * u.norm_squared();
        if q != 0.0 {
            let dev: f64 = x.iter().zip(zm.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            c += 0.5 * q * dev;
        }
        running.push(c);
    }
    trapezoid(&running, grid.dt()) + terminal_cost(scenario, atom, &x)
}

/// `Z m(t_k)` for every grid point.
fn coupling_targets(scenario: &Scenario, mean: &[DVector<f64>]) -> Vec<DVector<f64>> {
    mean.iter().map(|m| &scenario.coupling.z * m).collect()
}

fn terminal_cost(scenario: &Scenario, atom: &AgentTypeAtom, x: &DVector<f64>) -> f64 {
    scenario
        .destinations
        .iter()
        .zip(&atom.terminal_weights)
        .map(|(p, m)| 0.5 * m * (x - p).norm_squared())
        .fold(f64::INFINITY, f64::min)
}

/// A simulated finite population. Individual paths are rebuilt on demand
/// from the shared affine responses.
#[derive(Debug, Clone)]
pub struct PopulationRun {
    pub sample: PopulationSample,
    /// Destination chosen by each agent.
    pub choices: Vec<usize>,
    /// `x̂^(N)(t)`, the arithmetic mean of the agent states.
    pub mean_path: SampledPath<DVector<f64>>,
    pub costs: Vec<f64>,
    /// `Σ J_i`, summed in agent order.
    pub social_cost: f64,
    responses: Vec<Vec<AffineResponse>>,
}

impl PopulationRun {
    pub fn len(&self) -> usize {
        self.sample.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample.is_empty()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.mean_path.grid()
    }

    pub fn per_agent_cost(&self) -> f64 {
        self.social_cost / self.len() as f64
    }

    /// Fraction of agents choosing each destination.
    pub fn fractions(&self) -> Vec<f64> {
        let l = self.responses[0].len();
        let mut counts = vec![0usize; l];
        for &c in &self.choices {
            counts[c] += 1;
        }
        counts.iter().map(|&c| c as f64 / self.len() as f64).collect()
    }

    fn response(&self, i: usize) -> &AffineResponse {
        &self.responses[self.sample.atoms[i]][self.choices[i]]
    }

    pub fn state_path(&self, i: usize) -> Result<SampledPath<DVector<f64>>> {
        let r = self.response(i);
        let x0 = &self.sample.x0[i];
        SampledPath::new(*self.grid(), (0..self.grid().len()).map(|k| r.state(k, x0)).collect())
    }

    pub fn control_path(&self, i: usize) -> Result<SampledPath<DVector<f64>>> {
        let r = self.response(i);
        let x0 = &self.sample.x0[i];
        SampledPath::new(*self.grid(), (0..self.grid().len()).map(|k| r.control(k, x0)).collect())
    }
}

/// Classifies each agent by its basin and runs the bundle feedbacks.
/// Costs use the realized population mean in the coupling term.
pub fn simulate_decentralized(
    sample: &PopulationSample,
    mf: &MeanFieldSolution,
    grid: &TimeGrid,
) -> Result<PopulationRun> {
    if grid != mf.xbar.grid() {
        return Err(Error::GridMismatch("simulation grid differs from the mean-field grid".into()));
    }
    let scenario = &mf.scenario;
    let responses: Vec<Vec<AffineResponse>> = mf
        .bundles
        .iter()
        .map(|atom| atom.par_iter().map(AffineResponse::from_bundle).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let choices: Vec<usize> = sample
        .atoms
        .iter()
        .zip(&sample.x0)
        .map(|(&a, x)| mf.classify(a, x.as_slice()))
        .collect();

    // x̂^(N)(t_k) = (1/N) Σ_groups [Ξ_k Σ x⁰ + count b_k].
    let n = scenario.state_dim();
    let mut sums = vec![vec![(DVector::zeros(n), 0usize); scenario.destination_count()]; scenario.atoms.len()];
    for ((&a, &j), x) in sample.atoms.iter().zip(&choices).zip(&sample.x0) {
        sums[a][j].0 += x;
        sums[a][j].1 += 1;
    }
    let count = sample.len() as f64;
    let mean: Vec<DVector<f64>> = (0..grid.len())
        .map(|k| {
            let mut m = DVector::zeros(n);
            for (a, groups) in sums.iter().enumerate() {
                for (j, (sum, c)) in groups.iter().enumerate() {
                    if *c > 0 {
                        let r = &responses[a][j];
                        m += &r.transition[k] * sum + &r.offset[k] * (*c as f64);
                    }
                }
            }
            m / count
        })
        .collect();
    let costs = costs_against(scenario, sample, &choices, &responses, &mean);
    let social_cost = costs.iter().sum();
    Ok(PopulationRun {
        sample: sample.clone(),
        choices,
        mean_path: SampledPath::new(*grid, mean)?,
        costs,
        social_cost,
        responses,
    })
}

fn costs_against(
    scenario: &Scenario,
    sample: &PopulationSample,
    choices: &[usize],
    responses: &[Vec<AffineResponse>],
    coupled: &[DVector<f64>],
) -> Vec<f64> {
    let targets = coupling_targets(scenario, coupled);
    (0..sample.len())
        .into_par_iter()
        .map(|i| {
            let atom = &scenario.atoms[sample.atoms[i]];
            let r = &responses[sample.atoms[i]][choices[i]];
            let x0 = &sample.x0[i];
            agent_cost(scenario, atom, &targets, |k, x, u| {
                x.copy_from(&r.offset[k]);
                x.gemv(1.0, &r.transition[k], x0, 1.0);
                u.copy_from(&r.feed[k]);
                u.gemv(1.0, &r.gain[k], x0, 1.0);
            })
        })
        .collect()
}

/// `(J_soc, J_i)` of a run, recomputed from its paths.
pub fn social_cost(run: &PopulationRun, scenario: &Scenario) -> (f64, Vec<f64>) {
    let costs = costs_against(
        scenario,
        &run.sample,
        &run.choices,
        &run.responses,
        run.mean_path.values(),
    );
    (costs.iter().sum(), costs)
}

/// `(J_soc, J_i)` for arbitrary agent paths, for instance the centralized
/// optimum. The coupling uses the arithmetic mean of `states`.
pub fn social_cost_of_paths(
    scenario: &Scenario,
    atoms: &[&AgentTypeAtom],
    states: &[SampledPath<DVector<f64>>],
    controls: &[SampledPath<DVector<f64>>],
) -> Result<(f64, Vec<f64>)> {
    if atoms.len() != states.len() || states.len() != controls.len() || states.is_empty() {
        return Err(Error::Dimension("one atom, state path and control path per agent".into()));
    }
    let grid = scenario.grid;
    let count = states.len() as f64;
    let mean: Vec<DVector<f64>> = (0..grid.len())
        .map(|k| {
            let mut m = DVector::zeros(scenario.state_dim());
            for s in states {
                m += s.value(k);
            }
            m / count
        })
        .collect();
    let targets = coupling_targets(scenario, &mean);
    let costs: Vec<f64> = (0..states.len())
        .map(|i| {
            agent_cost(scenario, atoms[i], &targets, |k, x, u| {
                x.copy_from(states[i].value(k));
                u.copy_from(controls[i].value(k));
            })
        })
        .collect();
    Ok((costs.iter().sum(), costs))
}

/// `∫₀ᵀ |x̂^(N) - x̄|² dt`.
pub fn mean_path_residual(run: &PopulationRun, mf: &MeanFieldSolution) -> Result<f64> {
    if run.grid() != mf.xbar.grid() {
        return Err(Error::GridMismatch("run and mean path use different grids".into()));
    }
    let values: Vec<f64> = run
        .mean_path
        .values()
        .iter()
        .zip(mf.xbar.values())
        .map(|(a, b)| (a - b).norm_squared())
        .collect();
    Ok(trapezoid(&values, run.grid().dt()))
}

/// Monte Carlo estimate of the limiting per-agent social cost: `samples`
/// fresh agents follow the decentralized strategies and pay their cost
/// with `x̄` in place of the realized mean. Gaussian draws come in
/// antithetic pairs `x`, `2μ - x`.
pub fn monte_carlo_social_cost(mf: &MeanFieldSolution, samples: usize, seed: u64) -> Result<f64> {
    let mut sample = sample_population(&mf.scenario, samples, seed)?;
    if let InitialDistribution::Gaussian { mean, .. } = &mf.scenario.initial {
        for i in (1..samples).step_by(2) {
            sample.x0[i] = mean * 2.0 - &sample.x0[i - 1];
        }
    }
    let run = simulate_decentralized(&sample, mf, &mf.scenario.grid)?;
    let costs = costs_against(&mf.scenario, &sample, &run.choices, &run.responses, mf.xbar.values());
    Ok(costs.iter().sum::<f64>() / samples as f64)
}

/// One line of a [`GapTable`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub n: usize,
    /// `J*/N` from exhaustive enumeration.
    pub exact: f64,
    /// `J_soc/N` of the decentralized run.
    pub decentralized: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapTable {
    pub rows: Vec<GapRow>,
}

impl GapTable {
    /// The exact optimum is a lower bound on every row, up to `tol`.
    pub fn lower_bound_holds(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| r.gap >= -tol)
    }
}

/// Per-agent gap between the decentralized strategies and the exact social
/// optimum for each population size in `sizes`.
pub fn convergence_experiment(scenario: &Scenario, sizes: &[usize], seed: u64) -> Result<GapTable> {
    let l = scenario.destination_count() as u128;
    let cap = scenario.solver.enumeration_cap;
    for &n in sizes {
        let count = l.checked_pow(n as u32).unwrap_or(u128::MAX);
        if count > cap as u128 {
            return Err(Error::TooLarge { count, cap });
        }
    }
    let mf = find_fixed_point(scenario)?;
    let rows = sizes
        .iter()
        .map(|&n| {
            let sample = sample_population(scenario, n, seed)?;
            let run = simulate_decentralized(&sample, &mf, &scenario.grid)?;
            let exact = exact_social_optimum(scenario, &sample.agents(scenario))?;
            let exact = exact.per_agent_cost();
            let decentralized = run.per_agent_cost();
            Ok(GapRow {
                n,
                exact,
                decentralized,
                gap: decentralized - exact,
            })
        })
        .collect::<Result<_>>()?;
    Ok(GapTable { rows })
}
