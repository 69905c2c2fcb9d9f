//! Exact social optimum of a finite population.
//!
//! Stacking the `N` agents (agent-major, agent `i` in rows `i·n..(i+1)·n`)
//! turns the social cost for a fixed destination assignment `d` into one
//! linear-quadratic problem with running weight
//! `Q̃ = q [I + (1/N)(11ᵀ ⊗ L)]`. The optimum is the cheapest of the `l^N`
//! assignments.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{integrate_backward, integrate_backward_projected, integrate_forward, trapezoid, SampledPath, TimeGrid};
use crate::riccati::is_controllable;
use crate::scenario::{Agent, Scenario};

/// Block-structured data of the stacked `Nn`-dimensional problem.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    pub agents: usize,
    pub n: usize,
    pub m: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub terminal_weights: Vec<Vec<f64>>,
    pub destinations: Vec<DVector<f64>>,
    input_gain: DMatrix<f64>,
}

/// Stacks the agents' dynamics and the social running cost.
pub fn assemble(scenario: &Scenario, agents: &[Agent]) -> Result<StackedSystem> {
    if agents.is_empty() {
        return Err(Error::validation("agents", "at least one agent is required"));
    }
    let n = scenario.state_dim();
    let m = agents[0].atom.input_dim();
    let l = scenario.destination_count();
    let count = agents.len();
    for (i, agent) in agents.iter().enumerate() {
        let atom = &agent.atom;
        if atom.state_dim() != n || atom.a.ncols() != n || atom.b.nrows() != n {
            return Err(Error::Dimension(format!("agent {i}: state dimension differs from {n}")));
        }
        if atom.input_dim() != m {
            return Err(Error::Dimension(format!("agent {i}: input dimension differs from {m}")));
        }
        if agent.x0.len() != n {
            return Err(Error::Dimension(format!("agent {i}: x0 has length {}", agent.x0.len())));
        }
        if atom.terminal_weights.len() != l {
            return Err(Error::Dimension(format!("agent {i}: expected {l} terminal weights")));
        }
    }

    let big_n = count * n;
    let mut a = DMatrix::zeros(big_n, big_n);
    let mut b = DMatrix::zeros(big_n, count * m);
    let mut r = DMatrix::zeros(count * m, count * m);
    let mut x0 = DVector::zeros(big_n);
    for (i, agent) in agents.iter().enumerate() {
        a.view_mut((i * n, i * n), (n, n)).copy_from(&agent.atom.a);
        b.view_mut((i * n, i * m), (n, m)).copy_from(&agent.atom.b);
        for k in 0..m {
            r[(i * m + k, i * m + k)] = agent.atom.r;
        }
        x0.rows_mut(i * n, n).copy_from(&agent.x0);
    }

    let coupling = &scenario.coupling;
    let l_scaled = coupling.l_matrix() / count as f64;
    let mut q = DMatrix::identity(big_n, big_n);
    for i in 0..count {
        for k in 0..count {
            let mut block = q.view_mut((i * n, k * n), (n, n));
            block += &l_scaled;
        }
    }
    q *= coupling.q;

    let mut input_gain = DMatrix::zeros(big_n, big_n);
    for (i, agent) in agents.iter().enumerate() {
        input_gain
            .view_mut((i * n, i * n), (n, n))
            .copy_from(&agent.atom.input_gain());
    }

    Ok(StackedSystem {
        agents: count,
        n,
        m,
        a,
        b,
        q,
        r,
        x0,
        terminal_weights: agents.iter().map(|a| a.atom.terminal_weights.clone()).collect(),
        destinations: scenario.destinations.clone(),
        input_gain,
    })
}

impl StackedSystem {
    pub fn state_dim(&self) -> usize {
        self.agents * self.n
    }

    /// `l^N`, saturating at `u128::MAX`.
    pub fn assignment_count(&self) -> u128 {
        (self.destinations.len() as u128)
            .checked_pow(self.agents as u32)
            .unwrap_or(u128::MAX)
    }

    /// The `index`-th assignment in lexicographic order (agent 0 is the most
    /// significant digit).
    pub fn assignment(&self, mut index: u128) -> Vec<usize> {
        let l = self.destinations.len() as u128;
        let mut d = vec![0; self.agents];
        for slot in d.iter_mut().rev() {
            *slot = (index % l) as usize;
            index /= l;
        }
        d
    }

    fn check_assignment(&self, d: &[usize]) -> Result<()> {
        if d.len() != self.agents {
            return Err(Error::Dimension(format!("assignment has {} entries", d.len())));
        }
        if let Some(i) = d.iter().position(|&j| j >= self.destinations.len()) {
            return Err(Error::validation(format!("assignment[{i}]"), "no such destination"));
        }
        Ok(())
    }

    fn assigned_weights(&self, d: &[usize]) -> Vec<f64> {
        d.iter()
            .enumerate()
            .map(|(i, &j)| self.terminal_weights[i][j])
            .collect()
    }

    /// `Γ̃` for terminal weights `M_{i,d_i}` given per agent.
    pub fn solve_gamma(&self, weights: &[f64], grid: &TimeGrid) -> Result<SampledPath<DMatrix<f64>>> {
        let big_n = self.state_dim();
        let mut terminal = DMatrix::zeros(big_n, big_n);
        for (i, w) in weights.iter().enumerate() {
            for k in 0..self.n {
                terminal[(i * self.n + k, i * self.n + k)] = *w;
            }
        }
        let s = &self.input_gain;
        let a = &self.a;
        let at = a.transpose();
        let rhs = |_t: f64, g: &DMatrix<f64>| g * s * g - g * a - &at * g - &self.q;
        let symmetrize = |g: DMatrix<f64>| (&g + g.transpose()) * 0.5;
        integrate_backward_projected(rhs, terminal, grid, symmetrize).map_err(|e| match e {
            Error::Diverged { index } => Error::RiccatiDiverged { index },
            other => other,
        })
    }

    /// Optimal cost and value-function pieces for assignment `d`.
    pub fn solve_assignment(&self, d: &[usize], grid: &TimeGrid) -> Result<AssignmentSolution> {
        self.check_assignment(d)?;
        let gamma = Arc::new(self.solve_gamma(&self.assigned_weights(d), grid)?);
        self.solve_with_gamma(d, gamma)
    }

    fn solve_with_gamma(
        &self,
        d: &[usize],
        gamma: Arc<SampledPath<DMatrix<f64>>>,
    ) -> Result<AssignmentSolution> {
        let big_n = self.state_dim();
        let weights = self.assigned_weights(d);
        // M̃ d̃ and d̃ stacked
        let mut target = DVector::zeros(big_n);
        let mut weighted = DVector::zeros(big_n);
        for (i, &j) in d.iter().enumerate() {
            target.rows_mut(i * self.n, self.n).copy_from(&self.destinations[j]);
            weighted
                .rows_mut(i * self.n, self.n)
                .copy_from(&(&self.destinations[j] * weights[i]));
        }
        let s = &self.input_gain;
        let at = self.a.transpose();
        let rhs = |t: f64, (beta, _): &(DVector<f64>, f64)| {
            let g = gamma.dense(t).expect("t on grid");
            let sb = s * beta;
            (&g * &sb - &at * beta, 0.5 * beta.dot(&sb))
        };
        let terminal = (-weighted.clone(), 0.5 * target.dot(&weighted));
        let joint = integrate_backward(rhs, terminal, gamma.grid()).map_err(|e| match e {
            Error::Diverged { index } => Error::RiccatiDiverged { index },
            other => other,
        })?;
        let beta = joint.map_linear(|(b, _)| b.clone())?;
        let delta = joint.map_linear(|(_, d)| *d)?;
        let x0 = &self.x0;
        let cost = 0.5 * x0.dot(&(gamma.first() * x0)) + beta.first().dot(x0) + delta.first();
        Ok(AssignmentSolution {
            assignment: d.to_vec(),
            cost,
            gamma,
            beta,
            delta,
        })
    }

    /// `½xᵀQ̃x + ½uᵀR̃u`.
    pub fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + 0.5 * u.dot(&(&self.r * u))
    }

    /// `Σ_i M_{i,d_i}/2 |x_i - p_{d_i}|²`.
    pub fn terminal_cost(&self, d: &[usize], x: &DVector<f64>) -> f64 {
        d.iter()
            .enumerate()
            .map(|(i, &j)| {
                let xi = x.rows(i * self.n, self.n);
                0.5 * self.terminal_weights[i][j] * (xi - &self.destinations[j]).norm_squared()
            })
            .sum()
    }

    pub fn agent_state(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        x.rows(i * self.n, self.n).into_owned()
    }
}

/// Solution of the stacked problem for one assignment.
#[derive(Debug, Clone)]
pub struct AssignmentSolution {
    pub assignment: Vec<usize>,
    pub cost: f64,
    pub gamma: Arc<SampledPath<DMatrix<f64>>>,
    pub beta: SampledPath<DVector<f64>>,
    pub delta: SampledPath<f64>,
}

impl AssignmentSolution {
    /// `ũ = -R̃⁻¹ B̃ᵀ (Γ̃x + β̃)`.
    pub fn control(&self, system: &StackedSystem, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let g = self.gamma.dense(t)?;
        let beta = self.beta.dense(t)?;
        let mut u = system.b.transpose() * (g * x + beta);
        for k in 0..u.len() {
            u[k] /= -system.r[(k, k)];
        }
        Ok(u)
    }

    pub fn trajectory(&self, system: &StackedSystem) -> Result<SampledPath<DVector<f64>>> {
        let s = &system.input_gain;
        let rhs = |t: f64, x: &DVector<f64>| {
            let g = self.gamma.dense(t).expect("t on grid");
            let beta = self.beta.dense(t).expect("t on grid");
            &system.a * x - s * (g * x + beta)
        };
        integrate_forward(rhs, system.x0.clone(), self.gamma.grid())
    }

    pub fn controls(
        &self,
        system: &StackedSystem,
        states: &SampledPath<DVector<f64>>,
    ) -> Result<SampledPath<DVector<f64>>> {
        let grid = *states.grid();
        let values = (0..grid.len())
            .map(|k| self.control(system, states.value(k), grid.time(k)))
            .collect::<Result<Vec<_>>>()?;
        SampledPath::new(grid, values)
    }

    /// Cost of the simulated closed loop, by trapezoid quadrature.
    pub fn simulated_cost(&self, system: &StackedSystem) -> Result<f64> {
        let states = self.trajectory(system)?;
        let controls = self.controls(system, &states)?;
        let running: Vec<f64> = states
            .values()
            .iter()
            .zip(controls.values())
            .map(|(x, u)| system.running_cost(x, u))
            .collect();
        Ok(trapezoid(&running, states.grid().dt())
            + system.terminal_cost(&self.assignment, states.last()))
    }
}

#[derive(Debug, Clone)]
pub struct CentralizedSolution {
    pub system: StackedSystem,
    pub optimum: AssignmentSolution,
    /// Every assignment with its optimal cost, in lexicographic order.
    pub table: Vec<(Vec<usize>, f64)>,
}

impl CentralizedSolution {
    pub fn assignment(&self) -> &[usize] {
        &self.optimum.assignment
    }

    pub fn cost(&self) -> f64 {
        self.optimum.cost
    }

    pub fn per_agent_cost(&self) -> f64 {
        self.optimum.cost / self.system.agents as f64
    }
}

/// Enumerates every assignment and returns the cheapest; ties go to the
/// lexicographically smallest assignment.
pub fn exact_social_optimum(scenario: &Scenario, agents: &[Agent]) -> Result<CentralizedSolution> {
    let system = assemble(scenario, agents)?;
    let count = system.assignment_count();
    let cap = scenario.solver.enumeration_cap;
    if count > cap as u128 {
        return Err(Error::TooLarge { count, cap });
    }
    let grid = scenario.grid;
    let assignments: Vec<Vec<usize>> = (0..count).map(|i| system.assignment(i)).collect();

    // Γ̃ depends on the assignment only through the terminal weights.
    let mut keys: Vec<Vec<u64>> = Vec::new();
    let mut key_of = Vec::with_capacity(assignments.len());
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    for d in &assignments {
        let key: Vec<u64> = system.assigned_weights(d).iter().map(|w| w.to_bits()).collect();
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            keys.push(key);
            keys.len() - 1
        });
        key_of.push(slot);
    }
    let gammas: Vec<Arc<SampledPath<DMatrix<f64>>>> = keys
        .par_iter()
        .map(|key| {
            let weights: Vec<f64> = key.iter().map(|b| f64::from_bits(*b)).collect();
            system.solve_gamma(&weights, &grid).map(Arc::new)
        })
        .collect::<Result<_>>()?;

    let solved: Vec<AssignmentSolution> = assignments
        .par_iter()
        .zip(key_of.par_iter())
        .map(|(d, &g)| system.solve_with_gamma(d, Arc::clone(&gammas[g])))
        .collect::<Result<_>>()?;

    let mut best = 0;
    for (i, s) in solved.iter().enumerate() {
        if s.cost < solved[best].cost {
            best = i;
        }
    }
    let table = solved
        .iter()
        .map(|s| (s.assignment.clone(), s.cost))
        .collect();
    let optimum = solved.into_iter().nth(best).expect("at least one assignment");
    Ok(CentralizedSolution {
        system,
        optimum,
        table,
    })
}

/// One row of a [`ReachabilityReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReachabilityRow {
    pub terminal_weight: f64,
    pub assignment: Vec<usize>,
    /// Largest distance from `x_i(T)` to the destination assigned to `i`.
    pub assigned_distance: f64,
    /// Largest distance from `x_i(T)` to the nearest destination.
    pub nearest_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachabilityReport {
    pub epsilon: f64,
    pub rows: Vec<ReachabilityRow>,
    /// Smallest weight in the schedule whose terminal states all lie within
    /// `epsilon` of a destination.
    pub first_within: Option<f64>,
}

/// Re-solves the optimum with every terminal weight set to each value of
/// `schedule` and measures how close the agents end to the destinations.
/// The grid is refined as needed to keep the terminal layer resolved.
pub fn reachability_probe(
    scenario: &Scenario,
    agents: &[Agent],
    epsilon: f64,
    schedule: &[f64],
) -> Result<ReachabilityReport> {
    for (i, agent) in agents.iter().enumerate() {
        if !is_controllable(&agent.atom.a, &agent.atom.b) {
            return Err(Error::Uncontrollable { agent: i });
        }
    }
    let gain = agents
        .iter()
        .map(|a| a.atom.input_gain().norm())
        .fold(0.0, f64::max);
    let mut rows = Vec::with_capacity(schedule.len());
    for &weight in schedule {
        // Explicit RK4 needs dt·M·|S| well below 1 near the terminal layer.
        let needed = (2.0 * scenario.grid.horizon() * weight * gain).ceil() as usize;
        let mut refined = scenario.clone();
        refined.grid = TimeGrid::new(scenario.grid.horizon(), scenario.grid.steps().max(needed))?;
        let heavy: Vec<Agent> = agents
            .iter()
            .map(|a| {
                let mut atom = a.atom.clone();
                atom.terminal_weights.iter_mut().for_each(|w| *w = weight);
                Agent::new(atom, a.x0.clone())
            })
            .collect();
        let solution = exact_social_optimum(&refined, &heavy)?;
        let states = solution.optimum.trajectory(&solution.system)?;
        let end = states.last();
        let mut assigned_distance: f64 = 0.0;
        let mut nearest_distance: f64 = 0.0;
        for (i, &j) in solution.assignment().iter().enumerate() {
            let xi = solution.system.agent_state(end, i);
            assigned_distance = assigned_distance.max((&xi - &scenario.destinations[j]).norm());
            let nearest = scenario
                .destinations
                .iter()
                .map(|p| (&xi - p).norm())
                .fold(f64::INFINITY, f64::min);
            nearest_distance = nearest_distance.max(nearest);
        }
        rows.push(ReachabilityRow {
            terminal_weight: weight,
            assignment: solution.assignment().to_vec(),
            assigned_distance,
            nearest_distance,
        });
    }
    let first_within = rows
        .iter()
        .find(|r| r.nearest_distance <= epsilon)
        .map(|r| r.terminal_weight);
    Ok(ReachabilityReport {
        epsilon,
        rows,
        first_within,
    })
}
