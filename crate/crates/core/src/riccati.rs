//! Per-type, per-destination tracking problems of the generic agent.
//!
//! Against a given mean path `x̄`, an agent of type `θ` committed to
//! destination `j` minimizes
//!
//! ```text
//! ∫ q/2 |x|² + c(t)ᵀx + r/2 |u|² dt + M_j/2 |x(T) - p_j|²,   c = q Kᵀ x̄,
//! ```
//!
//! whose value function is `½xᵀΓx + βᵀx + δ`. `K` is the coupling's cost
//! matrix (see [`CouplingSpec::cost_matrix`]).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{
    integrate_backward, integrate_backward_projected, integrate_forward, trapezoid, SampledPath,
    TimeGrid,
};
use crate::scenario::{AgentTypeAtom, CouplingSpec};

fn riccati_error(e: Error) -> Error {
    match e {
        Error::Diverged { index } => Error::RiccatiDiverged { index },
        other => other,
    }
}

/// `Γ̇ = ΓSΓ - ΓA - AᵀΓ - qI`, `Γ(T) = M_j I`, symmetrized after every step.
pub fn solve_gamma(
    atom: &AgentTypeAtom,
    j: usize,
    q: f64,
    grid: &TimeGrid,
) -> Result<SampledPath<DMatrix<f64>>> {
    let n = atom.state_dim();
    let m_j = *atom
        .terminal_weights
        .get(j)
        .ok_or_else(|| Error::Dimension(format!("destination {j} has no terminal weight")))?;
    let s = atom.input_gain();
    let a = &atom.a;
    let at = a.transpose();
    let q_eye = DMatrix::<f64>::identity(n, n) * q;
    let rhs = |_t: f64, g: &DMatrix<f64>| g * &s * g - g * a - &at * g - &q_eye;
    let symmetrize = |g: DMatrix<f64>| (&g + g.transpose()) * 0.5;
    integrate_backward_projected(rhs, DMatrix::identity(n, n) * m_j, grid, symmetrize)
        .map_err(riccati_error)
}

/// Linear cost coefficient `c(t) = q Kᵀ x̄(t)` on the grid, or `None` when it
/// vanishes identically.
pub fn linear_cost_path(
    coupling: &CouplingSpec,
    xbar: Option<&SampledPath<DVector<f64>>>,
) -> Result<Option<SampledPath<DVector<f64>>>> {
    match xbar {
        Some(xbar) if coupling.q != 0.0 => {
            let gain = coupling.cost_matrix().transpose() * coupling.q;
            xbar.map_linear(|x| &gain * x).map(Some)
        }
        _ => Ok(None),
    }
}

/// `β̇ = (ΓS - Aᵀ)β - c`, `δ̇ = ½βᵀSβ`, with `β(T) = -M_j p_j` and
/// `δ(T) = ½M_j|p_j|²`.
pub fn solve_offset(
    atom: &AgentTypeAtom,
    j: usize,
    destination: &DVector<f64>,
    gamma: &SampledPath<DMatrix<f64>>,
    xbar: Option<&SampledPath<DVector<f64>>>,
    coupling: &CouplingSpec,
) -> Result<(SampledPath<DVector<f64>>, SampledPath<f64>)> {
    let linear = linear_cost_path(coupling, xbar)?;
    solve_offset_with(atom, j, destination, gamma, linear.as_ref())
}

pub(crate) fn solve_offset_with(
    atom: &AgentTypeAtom,
    j: usize,
    destination: &DVector<f64>,
    gamma: &SampledPath<DMatrix<f64>>,
    linear: Option<&SampledPath<DVector<f64>>>,
) -> Result<(SampledPath<DVector<f64>>, SampledPath<f64>)> {
    let grid = *gamma.grid();
    if let Some(c) = linear {
        if *c.grid() != grid {
            return Err(Error::GridMismatch("mean path and Γ use different grids".into()));
        }
    }
    if destination.len() != atom.state_dim() {
        return Err(Error::Dimension("destination length differs from n".into()));
    }
    let m_j = atom.terminal_weights[j];
    let s = atom.input_gain();
    let at = atom.a.transpose();
    let rhs = |t: f64, (beta, _): &(DVector<f64>, f64)| {
        let g = gamma.dense(t).expect("t on grid");
        let mut d_beta = &g * (&s * beta) - &at * beta;
        if let Some(c) = linear {
            d_beta -= c.dense(t).expect("t on grid");
        }
        let d_delta = 0.5 * beta.dot(&(&s * beta));
        (d_beta, d_delta)
    };
    let terminal = (
        destination * (-m_j),
        0.5 * m_j * destination.norm_squared(),
    );
    let joint = integrate_backward(rhs, terminal, &grid).map_err(riccati_error)?;
    let beta = joint.map_linear(|(b, _)| b.clone())?;
    let delta = joint.map_linear(|(_, d)| *d)?;
    Ok((beta, delta))
}

/// Value function pieces of one (type, destination) branch against one mean path.
#[derive(Debug, Clone)]
pub struct RiccatiBundle {
    pub destination: usize,
    pub target: DVector<f64>,
    pub terminal_weight: f64,
    pub q: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub r: f64,
    pub gamma: Arc<SampledPath<DMatrix<f64>>>,
    pub beta: SampledPath<DVector<f64>>,
    pub delta: SampledPath<f64>,
    /// `c(t) = q Kᵀ x̄(t)`; `None` when the mean path does not enter.
    pub linear: Option<SampledPath<DVector<f64>>>,
}

impl RiccatiBundle {
    /// Solves Γ, β and δ from scratch.
    pub fn solve(
        atom: &AgentTypeAtom,
        j: usize,
        destination: &DVector<f64>,
        coupling: &CouplingSpec,
        xbar: Option<&SampledPath<DVector<f64>>>,
        grid: &TimeGrid,
    ) -> Result<Self> {
        let gamma = Arc::new(solve_gamma(atom, j, coupling.q, grid)?);
        let linear = linear_cost_path(coupling, xbar)?;
        Self::with_gamma(atom, j, destination, coupling.q, gamma, linear)
    }

    /// Reuses a Γ path, which does not depend on the mean path.
    pub fn with_gamma(
        atom: &AgentTypeAtom,
        j: usize,
        destination: &DVector<f64>,
        q: f64,
        gamma: Arc<SampledPath<DMatrix<f64>>>,
        linear: Option<SampledPath<DVector<f64>>>,
    ) -> Result<Self> {
        let (beta, delta) = solve_offset_with(atom, j, destination, &gamma, linear.as_ref())?;
        Ok(Self {
            destination: j,
            target: destination.clone(),
            terminal_weight: atom.terminal_weights[j],
            q,
            a: atom.a.clone(),
            b: atom.b.clone(),
            r: atom.r,
            gamma,
            beta,
            delta,
            linear,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.gamma.grid()
    }

    pub fn input_gain(&self) -> DMatrix<f64> {
        &self.b * self.b.transpose() / self.r
    }

    /// `u = -(1/r) Bᵀ (Γ(t)x + β(t))`.
    pub fn feedback_control(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let g = self.gamma.dense(t)?;
        let beta = self.beta.dense(t)?;
        Ok(self.b.transpose() * (g * x + beta) * (-1.0 / self.r))
    }

    /// `½x⁰ᵀΓ(0)x⁰ + β(0)ᵀx⁰ + δ(0)`.
    pub fn branch_cost(&self, x0: &DVector<f64>) -> f64 {
        0.5 * x0.dot(&(self.gamma.first() * x0)) + self.beta.first().dot(x0) + self.delta.first()
    }

    /// Same as [`branch_cost`](Self::branch_cost) on a raw slice, without allocating.
    pub fn branch_cost_slice(&self, x0: &[f64]) -> f64 {
        let g = self.gamma.first();
        let beta = self.beta.first();
        let n = x0.len();
        let mut quad = 0.0;
        let mut lin = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for k in 0..n {
                row += g[(i, k)] * x0[k];
            }
            quad += x0[i] * row;
            lin += beta[i] * x0[i];
        }
        0.5 * quad + lin + self.delta.first()
    }

    /// Forward RK4 of `ẋ = Ax + B u(t, x)`.
    pub fn closed_loop_trajectory(&self, x0: &DVector<f64>) -> Result<SampledPath<DVector<f64>>> {
        let s = self.input_gain();
        let rhs = |t: f64, x: &DVector<f64>| {
            let g = self.gamma.dense(t).expect("t on grid");
            let beta = self.beta.dense(t).expect("t on grid");
            &self.a * x - &s * (g * x + beta)
        };
        integrate_forward(rhs, x0.clone(), self.grid())
    }

    /// Running cost `q/2|x|² + c(t_k)ᵀx + r/2|u|²` at grid point `k`.
    pub fn running_cost(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let mut cost = 0.5 * self.q * x.norm_squared() + 0.5 * self.r * u.norm_squared();
        if let Some(c) = &self.linear {
            cost += c.value(k).dot(x);
        }
        cost
    }

    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.terminal_weight * (x - &self.target).norm_squared()
    }

    /// Cost of an arbitrary state/control pair, by trapezoid quadrature.
    pub fn evaluate_cost(
        &self,
        states: &SampledPath<DVector<f64>>,
        controls: &SampledPath<DVector<f64>>,
    ) -> f64 {
        let running: Vec<f64> = (0..self.grid().len())
            .map(|k| self.running_cost(k, states.value(k), controls.value(k)))
            .collect();
        trapezoid(&running, self.grid().dt()) + self.terminal_cost(states.last())
    }

    /// Simulates the closed loop from `x0` and integrates its cost.
    pub fn simulated_cost(&self, x0: &DVector<f64>) -> Result<f64> {
        let states = self.closed_loop_trajectory(x0)?;
        let grid = *self.grid();
        let controls = SampledPath::new(
            grid,
            (0..grid.len())
                .map(|k| self.feedback_control(states.value(k), grid.time(k)))
                .collect::<Result<Vec<_>>>()?,
        )?;
        Ok(self.evaluate_cost(&states, &controls))
    }

    /// `½xᵀΓ(t_k)x + β(t_k)ᵀx + δ(t_k)`.
    pub fn value(&self, k: usize, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(self.gamma.value(k) * x)) + self.beta.value(k).dot(x) + self.delta.value(k)
    }

    /// Hamilton-Jacobi-Bellman residual of the quadratic value function at an
    /// interior grid point, with a central difference in time.
    pub fn hjb_residual(&self, k: usize, x: &DVector<f64>) -> f64 {
        let grid = self.grid();
        assert!(k > 0 && k < grid.steps(), "interior grid point required");
        let dv_dt = (self.value(k + 1, x) - self.value(k - 1, x)) / (2.0 * grid.dt());
        let grad = self.gamma.value(k) * x + self.beta.value(k);
        let bt_grad = self.b.transpose() * &grad;
        let mut running = 0.5 * self.q * x.norm_squared();
        if let Some(c) = &self.linear {
            running += c.value(k).dot(x);
        }
        dv_dt + running + grad.dot(&(&self.a * x)) - bt_grad.norm_squared() / (2.0 * self.r)
    }

    /// Closed-loop state transition `Φ(0, t)ᵀ`: `Ξ̇ = (A - SΓ)Ξ`, `Ξ(0) = I`.
    pub fn state_transition(&self) -> Result<SampledPath<DMatrix<f64>>> {
        state_transition(&self.a, &self.input_gain(), &self.gamma)
    }

    /// Closed-loop response from `x(0) = 0`: `ḃ = (A - SΓ)b - Sβ`.
    pub fn zero_state_response(&self) -> Result<SampledPath<DVector<f64>>> {
        let s = self.input_gain();
        let n = self.a.nrows();
        let rhs = |t: f64, x: &DVector<f64>| {
            let g = self.gamma.dense(t).expect("t on grid");
            let beta = self.beta.dense(t).expect("t on grid");
            &self.a * x - &s * (g * x + beta)
        };
        integrate_forward(rhs, DVector::zeros(n), self.grid())
    }
}

pub(crate) fn state_transition(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    gamma: &SampledPath<DMatrix<f64>>,
) -> Result<SampledPath<DMatrix<f64>>> {
    let n = a.nrows();
    let rhs = |t: f64, xi: &DMatrix<f64>| {
        let g = gamma.dense(t).expect("t on grid");
        (a - s * g) * xi
    };
    integrate_forward(rhs, DMatrix::identity(n, n), gamma.grid())
}

/// `Φ(t, 0)` for `Φ̇ = ΠΦ`, `Π = ΓS - Aᵀ`.
#[derive(Debug, Clone)]
pub struct TransitionPath {
    pub phi: SampledPath<DMatrix<f64>>,
    b: DMatrix<f64>,
}

/// Transition matrix of the costate-like system driving β.
pub fn solve_transition(
    atom: &AgentTypeAtom,
    gamma: &SampledPath<DMatrix<f64>>,
) -> Result<TransitionPath> {
    let s = atom.input_gain();
    let at = atom.a.transpose();
    let rhs = |t: f64, phi: &DMatrix<f64>| {
        let g = gamma.dense(t).expect("t on grid");
        (g * &s - &at) * phi
    };
    let n = atom.state_dim();
    let phi = integrate_forward(rhs, DMatrix::identity(n, n), gamma.grid())?;
    Ok(TransitionPath {
        phi,
        b: atom.b.clone(),
    })
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

impl TransitionPath {
    pub fn grid(&self) -> &TimeGrid {
        self.phi.grid()
    }

    /// `Φ(t_k, t_e) = Φ(t_k, 0) Φ(t_e, 0)⁻¹` together with the condition
    /// number of the inverted factor.
    pub fn between(&self, k: usize, e: usize) -> Result<(DMatrix<f64>, f64)> {
        let at_e = self.phi.value(e);
        let cond = condition_number(at_e);
        let inv = at_e
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular(format!("Φ(t_{e}, 0)")))?;
        Ok((self.phi.value(k) * inv, cond))
    }

    /// `Ψ(η₁, η₂, η₃, η₄) = Φ(η₁, η₂)ᵀ B Bᵀ Φ(η₃, η₄)` at grid indices.
    pub fn psi(&self, e1: usize, e2: usize, e3: usize, e4: usize) -> Result<DMatrix<f64>> {
        let (left, _) = self.between(e1, e2)?;
        let (right, _) = self.between(e3, e4)?;
        Ok(left.transpose() * &self.b * self.b.transpose() * right)
    }

    /// Generic-agent trajectory written with transition matrices only,
    ///
    /// ```text
    /// x(t) = Φ(0,t)ᵀx⁰ + (M/r)∫₀ᵗ Ψ(σ,t,σ,T) p dσ
    ///      + (1/r)∫₀ᵗ ∫_T^σ Ψ(σ,t,σ,τ) c(τ) dτ dσ,
    /// ```
    ///
    /// evaluated with trapezoid sums. Used to cross-check the closed loop.
    pub fn explicit_trajectory(
        &self,
        bundle: &RiccatiBundle,
        x0: &DVector<f64>,
    ) -> Result<SampledPath<DVector<f64>>> {
        let grid = *self.grid();
        let steps = grid.steps();
        let dt = grid.dt();
        let inverses: Vec<DMatrix<f64>> = self
            .phi
            .values()
            .iter()
            .enumerate()
            .map(|(k, p)| {
                p.clone()
                    .try_inverse()
                    .ok_or_else(|| Error::Singular(format!("Φ(t_{k}, 0)")))
            })
            .collect::<Result<_>>()?;
        let n = x0.len();
        let bbt = &self.b * self.b.transpose();

        // tail[k] = ∫_{t_k}^T Φ(τ,0)⁻¹ c(τ) dτ
        let mut tail = vec![DVector::zeros(n); steps + 1];
        if let Some(c) = &bundle.linear {
            for k in (0..steps).rev() {
                let left = &inverses[k] * c.value(k);
                let right = &inverses[k + 1] * c.value(k + 1);
                tail[k] = &tail[k + 1] + (left + right) * (0.5 * dt);
            }
        }
        let pull = &inverses[steps] * &bundle.target * bundle.terminal_weight;
        // integrand(σ) = Φ(σ,0)ᵀ B Bᵀ Φ(σ,0) [M Φ(T,0)⁻¹ p - tail(σ)]
        let integrand: Vec<DVector<f64>> = (0..=steps)
            .map(|k| {
                let p = self.phi.value(k);
                p.transpose() * (&bbt * (p * (&pull - &tail[k])))
            })
            .collect();
        let mut acc = DVector::zeros(n);
        let mut values = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            if k > 0 {
                acc += (&integrand[k - 1] + &integrand[k]) * (0.5 * dt);
            }
            let back = inverses[k].transpose();
            values.push(&back * x0 + &back * &acc / bundle.r);
        }
        SampledPath::new(grid, values)
    }
}

/// Kalman rank test on `[B, AB, …, Aⁿ⁻¹B]`.
pub fn is_controllable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    let scale = ctrb.amax().max(f64::MIN_POSITIVE);
    ctrb.rank(1e-10 * scale) == n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::CouplingMode;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_atom(a: f64, b: f64, r: f64, m: &[f64]) -> AgentTypeAtom {
        AgentTypeAtom::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            r,
            m.to_vec(),
        )
    }

    fn coupling(q: f64, z: f64) -> CouplingSpec {
        CouplingSpec::new(q, DMatrix::from_element(1, 1, z), CouplingMode::Cooperative)
    }

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn grid(t: f64, k: usize) -> TimeGrid {
        TimeGrid::new(t, k).unwrap()
    }

    fn scalar_bundle() -> RiccatiBundle {
        let atom = scalar_atom(0.0, 1.0, 1.0, &[1.0]);
        RiccatiBundle::solve(&atom, 0, &v1(1.0), &coupling(0.0, 0.0), None, &grid(1.0, 1000)).unwrap()
    }

    fn two_site_atom() -> AgentTypeAtom {
        AgentTypeAtom::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.02, -0.3]),
            DMatrix::from_row_slice(2, 1, &[0.0, 0.3]),
            10.0,
            vec![1200.0, 1200.0],
        )
    }

    #[test]
    fn scalar_closed_forms() {
        let b = scalar_bundle();
        assert_abs_diff_eq!(b.gamma.first()[(0, 0)], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(b.beta.first()[0], -0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(*b.delta.first(), 0.25, epsilon = 1e-8);
        assert_abs_diff_eq!(b.branch_cost(&v1(0.0)), 0.25, epsilon = 1e-8);
        assert_abs_diff_eq!(b.branch_cost(&v1(1.0)), 0.0, epsilon = 1e-8);
        let u = b.feedback_control(&v1(0.0), 0.0).unwrap();
        assert_abs_diff_eq!(u[0], 0.5, epsilon = 1e-8);
        let path = b.closed_loop_trajectory(&v1(0.0)).unwrap();
        for (t, x) in b.grid().times().zip(path.values()) {
            assert_abs_diff_eq!(x[0], t / 2.0, epsilon = 1e-8);
        }
        let rest = b.closed_loop_trajectory(&v1(1.0)).unwrap();
        assert!(rest.values().iter().all(|x| (x[0] - 1.0).abs() < 1e-9));
    }

    #[test]
    fn riccati_equilibrium_is_stationary() {
        let atom = scalar_atom(0.0, 1.0, 4.0, &[2.0]);
        let g = solve_gamma(&atom, 0, 1.0, &grid(1.0, 200)).unwrap();
        assert!(g.values().iter().all(|m| (m[(0, 0)] - 2.0).abs() < 1e-12));
    }

    #[test]
    fn zero_target_gives_zero_offsets() {
        let atom = scalar_atom(0.0, 1.0, 1.0, &[1.0]);
        let b = RiccatiBundle::solve(&atom, 0, &v1(0.0), &coupling(0.0, 0.0), None, &grid(1.0, 100))
            .unwrap();
        assert!(b.beta.values().iter().all(|v| v[0] == 0.0));
        assert!(b.delta.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stationarity_gives_zero_control() {
        let b = scalar_bundle();
        let t = 0.3;
        let g = b.gamma.dense(t).unwrap()[(0, 0)];
        let beta = b.beta.dense(t).unwrap()[0];
        let u = b.feedback_control(&v1(-beta / g), t).unwrap();
        assert_abs_diff_eq!(u[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn gamma_symmetric_positive_definite() {
        let atom = two_site_atom();
        let g = solve_gamma(&atom, 0, 40.0, &grid(2.0, 2000)).unwrap();
        for m in g.values() {
            assert_eq!(m, &m.transpose());
            assert!(m.clone().symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn two_site_gamma_matches_reference() {
        let atom = two_site_atom();
        let g = solve_gamma(&atom, 0, 40.0, &grid(2.0, 2000)).unwrap();
        for (got, want) in g.first().iter().zip(TWO_SITE_GAMMA0.iter()) {
            assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    /// Γ(0) for the two-site example atom at q = 40, from an adaptive
    /// eighth-order integration at relative tolerance 1e-13.
    const TWO_SITE_GAMMA0: [f64; 4] = [190.292129982, 151.87505147, 151.87505147, 181.389018187];

    #[test]
    fn transition_identity_and_closed_form() {
        let atom = scalar_atom(0.0, 0.0, 1.0, &[1.0]);
        let g = solve_gamma(&atom, 0, 0.0, &grid(1.0, 100)).unwrap();
        let tr = solve_transition(&atom, &g).unwrap();
        assert!(tr.phi.values().iter().all(|m| m[(0, 0)] == 1.0));

        let b = scalar_bundle();
        let atom = scalar_atom(0.0, 1.0, 1.0, &[1.0]);
        let tr = solve_transition(&atom, &b.gamma).unwrap();
        // Φ̇ = Γ Φ with Γ = 1/(2 - t) gives Φ(t,0) = 2/(2 - t)... as a costate
        // transition; the closed-loop state transition is its inverse transpose.
        for (t, m) in b.grid().times().zip(tr.phi.values()) {
            assert_abs_diff_eq!(m[(0, 0)], 2.0 / (2.0 - t), epsilon = 1e-8);
        }
        let xi = b.state_transition().unwrap();
        assert_abs_diff_eq!(xi.last()[(0, 0)], 0.5, epsilon = 1e-8);
    }

    #[test]
    fn transition_semigroup() {
        let atom = two_site_atom();
        let g = solve_gamma(&atom, 1, 40.0, &grid(2.0, 2000)).unwrap();
        let tr = solve_transition(&atom, &g).unwrap();
        let (whole, _) = tr.between(2000, 0).unwrap();
        let (second, cond) = tr.between(2000, 1000).unwrap();
        let (first, _) = tr.between(1000, 0).unwrap();
        assert!(cond.is_finite());
        let diff = (&second * &first - &whole).amax() / whole.amax();
        assert!(diff < 1e-6, "{diff}");
        let (eye, _) = tr.between(700, 700).unwrap();
        assert!((eye - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn explicit_formula_matches_closed_loop() {
        let atom = scalar_atom(0.4, 1.0, 2.0, &[5.0]);
        let g = grid(1.0, 4000);
        let xbar = SampledPath::from_fn(g, |t| v1(0.5 + t.sin())).unwrap();
        let c = coupling(3.0, 2.5);
        let b = RiccatiBundle::solve(&atom, 0, &v1(1.5), &c, Some(&xbar), &g).unwrap();
        let tr = solve_transition(&atom, &b.gamma).unwrap();
        let x0 = v1(-0.7);
        let closed = b.closed_loop_trajectory(&x0).unwrap();
        let explicit = tr.explicit_trajectory(&b, &x0).unwrap();
        let gap = closed.sup_distance(&explicit);
        assert!(gap < 1e-5, "{gap}");
    }

    #[test]
    fn affine_response_matches_closed_loop() {
        let atom = two_site_atom();
        let g = grid(2.0, 2000);
        let xbar = SampledPath::from_fn(g, |t| DVector::from_vec(vec![-5.0 + t, 10.0 - 4.0 * t])).unwrap();
        let c = CouplingSpec::new(40.0, DMatrix::identity(2, 2) * 3.5, CouplingMode::Cooperative);
        let b = RiccatiBundle::solve(&atom, 1, &DVector::from_vec(vec![10.0, 0.0]), &c, Some(&xbar), &g)
            .unwrap();
        let xi = b.state_transition().unwrap();
        let off = b.zero_state_response().unwrap();
        let x0 = DVector::from_vec(vec![-3.0, 7.0]);
        let closed = b.closed_loop_trajectory(&x0).unwrap();
        for k in 0..=g.steps() {
            let affine = xi.value(k) * &x0 + off.value(k);
            assert!((affine - closed.value(k)).amax() < 1e-9);
        }
    }

    #[test]
    fn branch_cost_matches_simulation() {
        let atom = two_site_atom();
        let g = grid(2.0, 2000);
        let xbar = SampledPath::from_fn(g, |t| DVector::from_vec(vec![-5.0 + 3.0 * t, 10.0 - 4.0 * t]))
            .unwrap();
        let c = CouplingSpec::new(40.0, DMatrix::identity(2, 2) * 3.5, CouplingMode::Cooperative);
        let x0 = DVector::from_vec(vec![-5.0, 10.0]);
        for (j, p) in [(0, -10.0), (1, 10.0)] {
            let b = RiccatiBundle::solve(&atom, j, &DVector::from_vec(vec![p, 0.0]), &c, Some(&xbar), &g)
                .unwrap();
            let formula = b.branch_cost(&x0);
            let simulated = b.simulated_cost(&x0).unwrap();
            assert!(((formula - simulated) / formula).abs() < 1e-3, "{formula} {simulated}");
            assert_abs_diff_eq!(b.branch_cost_slice(x0.as_slice()), formula, epsilon = 1e-9);
        }
    }

    #[test]
    fn perturbations_never_beat_the_feedback() {
        let atom = scalar_atom(0.3, 1.0, 1.0, &[4.0]);
        let g = grid(1.0, 1000);
        let xbar = SampledPath::from_fn(g, |t| v1(1.0 - t)).unwrap();
        let c = coupling(2.0, 3.0);
        let b = RiccatiBundle::solve(&atom, 0, &v1(1.0), &c, Some(&xbar), &g).unwrap();
        let x0 = v1(-0.4);
        let optimal = b.branch_cost(&x0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let eps: f64 = rng.random_range(0.05..0.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let freq: f64 = rng.random_range(0.0..6.0);
            let phase: f64 = rng.random_range(0.0..6.0);
            let v = move |t: f64| eps * (freq * t + phase).sin();
            let rhs = |t: f64, x: &DVector<f64>| {
                let u = b.feedback_control(x, t).unwrap()[0] + v(t);
                v1(0.3 * x[0] + u)
            };
            let states = integrate_forward(rhs, x0.clone(), &g).unwrap();
            let controls = SampledPath::from_fn(g, |t| {
                let k = (t / g.dt()).round() as usize;
                v1(b.feedback_control(states.value(k), t).unwrap()[0] + v(t))
            })
            .unwrap();
            let cost = b.evaluate_cost(&states, &controls);
            assert!(cost >= optimal - 1e-6, "{cost} < {optimal}");
        }
    }

    #[test]
    fn hjb_residual_shrinks_with_refinement() {
        let atom = two_site_atom();
        let c = CouplingSpec::new(10.0, DMatrix::identity(2, 2) * 3.5, CouplingMode::Cooperative);
        let dest = DVector::from_vec(vec![10.0, 0.0]);
        let worst = |k: usize| {
            let g = grid(2.0, k);
            let xbar = SampledPath::from_fn(g, |t| DVector::from_vec(vec![t, -t])).unwrap();
            let b = RiccatiBundle::solve(&atom, 1, &dest, &c, Some(&xbar), &g).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                let x = DVector::from_fn(2, |_, _| rng.random_range(-10.0..10.0));
                for frac in [0.25, 0.5, 0.75] {
                    let idx = (frac * k as f64) as usize;
                    worst = worst.max(b.hjb_residual(idx, &x).abs());
                }
            }
            worst
        };
        let coarse = worst(500);
        let fine = worst(1000);
        assert!(fine < coarse, "{fine} !< {coarse}");
    }

    #[test]
    fn controllability() {
        assert!(is_controllable(&DMatrix::zeros(1, 1), &DMatrix::identity(1, 1)));
        assert!(!is_controllable(&DMatrix::zeros(1, 1), &DMatrix::zeros(1, 1)));
        let atom = two_site_atom();
        assert!(is_controllable(&atom.a, &atom.b));
    }
}
