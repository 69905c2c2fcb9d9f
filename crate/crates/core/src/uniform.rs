//! Fast path for a uniform population (one type atom, one terminal weight).
//!
//! Then all `Γ_j` coincide, the basins are separated by hyperplanes, and any
//! fixed point of `G` has the form `x̄(t) = R₁(t)μ₀ + R₂(t)p_λ` with
//! `p_λ = Σ λ_j p_j`. The fractions `λ` solve `F(λ) = λ`, which for two
//! destinations is a scalar root found by bisection.
//!
//! `R₁`, `R₂` come from the linear two-point boundary problem satisfied by
//! the population mean and its costate `ȳ = E[Γx + β]`:
//!
//! ```text
//! d/dt x̄ = A x̄ - S ȳ,   d/dt ȳ = -Aᵀȳ - q (I + Kᵀ) x̄,
//! x̄(0) = μ₀,            ȳ(T) = M (x̄(T) - p_λ).
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::meanfield::{compute_basins, MeanFieldOperator, MeanFieldSolution};
use crate::numerics::{integrate_forward, SampledPath, TimeGrid};
use crate::scenario::{AgentTypeAtom, CouplingSpec, Scenario};

/// `x̄(t) = R₁(t)μ₀ + R₂(t)p` for every mean `μ₀` and target `p`.
#[derive(Debug, Clone)]
pub struct UniformPathBasis {
    pub r1: SampledPath<DMatrix<f64>>,
    pub r2: SampledPath<DMatrix<f64>>,
}

/// Solves for `R₁`, `R₂` through the fundamental matrix of the
/// state/costate system.
pub fn solve_path_basis(
    atom: &AgentTypeAtom,
    coupling: &CouplingSpec,
    grid: &TimeGrid,
) -> Result<UniformPathBasis> {
    if !atom.has_uniform_terminal_weights() {
        return Err(Error::validation(
            "atoms[0].m",
            "the uniform path basis needs one terminal weight shared by all destinations",
        ));
    }
    let n = atom.state_dim();
    let m = atom.terminal_weights[0];
    let s = atom.input_gain();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&atom.a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    let coupling_block =
        (DMatrix::identity(n, n) + coupling.cost_matrix().transpose()) * (-coupling.q);
    h.view_mut((n, 0), (n, n)).copy_from(&coupling_block);
    h.view_mut((n, n), (n, n)).copy_from(&(-atom.a.transpose()));

    let w = integrate_forward(|_, x: &DMatrix<f64>| &h * x, DMatrix::identity(2 * n, 2 * n), grid)?;
    let end = w.last();
    let block = |w: &DMatrix<f64>, i: usize, j: usize| w.view((i * n, j * n), (n, n)).into_owned();
    let lhs = block(end, 1, 1) - block(end, 0, 1) * m;
    let inv = lhs
        .try_inverse()
        .ok_or_else(|| Error::Singular("terminal costate map of the uniform basis".into()))?;
    let c1 = &inv * (block(end, 0, 0) * m - block(end, 1, 0));
    let c2 = &inv * (-m);
    let r1 = w.map_linear(|w| block(w, 0, 0) + block(w, 0, 1) * &c1)?;
    let r2 = w.map_linear(|w| block(w, 0, 1) * &c2)?;
    Ok(UniformPathBasis { r1, r2 })
}

impl UniformPathBasis {
    pub fn path(&self, mu0: &DVector<f64>, p: &DVector<f64>) -> Result<SampledPath<DVector<f64>>> {
        let first = self.r1.map_linear(|r| r * mu0)?;
        let second = self.r2.map_linear(|r| r * p)?;
        first.add_scaled(1.0, &second)
    }
}

/// Outcome of the bisection on `g(λ) = F(λ)₁ - λ`.
#[derive(Debug, Clone)]
pub struct LambdaSolution {
    /// Fractions choosing each destination.
    pub lambda: Vec<f64>,
    /// `g` at the returned point.
    pub gap: f64,
    pub steps: usize,
    /// `g` kept one sign on `[0, 1]`; the returned point is the better endpoint.
    pub endpoint: bool,
    pub xbar: SampledPath<DVector<f64>>,
}

/// Uniform-population solver: path basis plus the fraction map.
#[derive(Debug, Clone)]
pub struct UniformSolver {
    op: MeanFieldOperator,
    basis: UniformPathBasis,
    mu0: DVector<f64>,
}

impl UniformSolver {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        if scenario.atoms.len() != 1 {
            return Err(Error::validation("atoms", "the uniform solver needs exactly one type atom"));
        }
        let basis = solve_path_basis(&scenario.atoms[0], &scenario.coupling, &scenario.grid)?;
        Ok(Self {
            op: MeanFieldOperator::new(scenario)?,
            basis,
            mu0: scenario.initial.mean(),
        })
    }

    pub fn basis(&self) -> &UniformPathBasis {
        &self.basis
    }

    pub fn operator(&self) -> &MeanFieldOperator {
        &self.op
    }

    fn target(&self, lambda: &[f64]) -> Result<DVector<f64>> {
        let dest = &self.op.scenario().destinations;
        if lambda.len() != dest.len() {
            return Err(Error::Dimension(format!("{} fractions for {} destinations", lambda.len(), dest.len())));
        }
        let mut p = DVector::zeros(self.mu0.len());
        for (w, d) in lambda.iter().zip(dest) {
            p += d * *w;
        }
        Ok(p)
    }

    /// `R₁μ₀ + R₂p_λ`.
    pub fn mean_path(&self, lambda: &[f64]) -> Result<SampledPath<DVector<f64>>> {
        self.basis.path(&self.mu0, &self.target(lambda)?)
    }

    /// `F(λ)`: mass of `P₀` in each basin when agents respond to the path
    /// built from `λ`.
    pub fn fraction_map(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        let xbar = self.mean_path(lambda)?;
        let bundles = self.op.bundles(Some(&xbar))?;
        let basins = compute_basins(&bundles[0]);
        Ok(self.op.moments(&basins).iter().map(|m| m.mass).collect())
    }

    /// Bisection on `g(λ) = F(λ)₁ - λ` over `[0, 1]`, where `λ` is the
    /// fraction choosing the first destination.
    pub fn solve_lambda_bisection(&self, tol: f64) -> Result<LambdaSolution> {
        if self.op.scenario().destination_count() != 2 {
            return Err(Error::validation("l", "bisection needs exactly two destinations"));
        }
        let g = |x: f64| -> Result<f64> { Ok(self.fraction_map(&[x, 1.0 - x])?[0] - x) };
        let finish = |x: f64, gap: f64, steps: usize, endpoint: bool| -> Result<LambdaSolution> {
            Ok(LambdaSolution {
                lambda: vec![x, 1.0 - x],
                gap,
                steps,
                endpoint,
                xbar: self.mean_path(&[x, 1.0 - x])?,
            })
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        let g_lo = g(lo)?;
        let g_hi = g(hi)?;
        if g_lo.abs() <= tol {
            return finish(lo, g_lo, 0, false);
        }
        if g_hi.abs() <= tol {
            return finish(hi, g_hi, 0, false);
        }
        if g_lo.signum() == g_hi.signum() {
            return if g_lo.abs() <= g_hi.abs() {
                finish(lo, g_lo, 0, true)
            } else {
                finish(hi, g_hi, 0, true)
            };
        }
        let lo_sign = g_lo.signum();
        let mut brackets = Vec::with_capacity(60);
        for step in 1..=60 {
            let mid = 0.5 * (lo + hi);
            let value = g(mid)?;
            if value.abs() <= tol {
                return finish(mid, value, step, false);
            }
            if value.signum() == lo_sign {
                lo = mid;
            } else {
                hi = mid;
            }
            brackets.push((lo, hi));
        }
        Err(Error::Bisection { brackets })
    }

    /// Re-evaluates `G` at the bisection path so the result can be used
    /// wherever a Picard solution is expected. `iterations` holds the
    /// number of bisection steps.
    pub fn solution(&self, lambda: &LambdaSolution) -> Result<MeanFieldSolution> {
        let step = self.op.evaluate(&lambda.xbar)?;
        let residual = step.output.sup_distance(&lambda.xbar);
        Ok(MeanFieldSolution {
            xbar: lambda.xbar.clone(),
            bundles: step.bundles,
            classifier: step.classifier,
            moments: step.moments,
            residual,
            iterations: lambda.steps,
            residual_history: vec![residual],
            scenario: self.op.scenario().clone(),
        })
    }

    /// Closed-form dependence of the basin offsets on `(μ₀, p_λ)`:
    /// `θ¹_jk = M(p_j - p_k)ᵀ(R₁(T) - Φ(0,T)ᵀ)` and
    /// `θ²_jk = M(p_j - p_k)ᵀ(R₂(T) - (M/r)∫₀ᵀ Ψ(η,T,η,T) dη)`.
    pub fn offset_sensitivities(&self, j: usize, k: usize) -> Result<(DVector<f64>, DVector<f64>)> {
        let scenario = self.op.scenario();
        let atom = &scenario.atoms[0];
        let m = atom.terminal_weights[0];
        let grid = scenario.grid;
        let xi = self.op.state_transition(0, j);
        // Φ(η,T)ᵀ = Ξ(T) Ξ(η)⁻¹, so Ψ(η,T,η,T) = Ξ(T)Ξ(η)⁻¹ B Bᵀ Ξ(η)⁻ᵀ Ξ(T)ᵀ.
        let bbt = &atom.b * atom.b.transpose();
        let end = xi.last();
        let integrand: Vec<DMatrix<f64>> = xi
            .values()
            .iter()
            .map(|x| {
                let inv = x.clone().try_inverse().expect("transition is invertible");
                let left = end * &inv;
                &left * &bbt * left.transpose()
            })
            .collect();
        let mut integral = DMatrix::zeros(atom.state_dim(), atom.state_dim());
        for pair in integrand.windows(2) {
            integral += (&pair[0] + &pair[1]) * (0.5 * grid.dt());
        }
        let diff = (&scenario.destinations[j] - &scenario.destinations[k]) * m;
        let theta1 = (self.basis.r1.last() - end).transpose() * &diff;
        let theta2 = (self.basis.r2.last() - integral * (m / atom.r)).transpose() * &diff;
        Ok((theta1, theta2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::find_fixed_point;
    use crate::scenario::{CouplingMode, InitialDistribution, SolverConfig};
    use approx::assert_abs_diff_eq;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn symmetric(q: f64) -> Scenario {
        Scenario {
            grid: TimeGrid::new(1.0, 400).unwrap(),
            coupling: CouplingSpec::new(q, DMatrix::from_element(1, 1, -1.0), CouplingMode::Cooperative),
            destinations: vec![v1(-1.0), v1(1.0)],
            atoms: vec![AgentTypeAtom::new(
                DMatrix::from_element(1, 1, 0.1),
                DMatrix::from_element(1, 1, 1.0),
                1.0,
                vec![5.0, 5.0],
            )],
            initial: InitialDistribution::Gaussian {
                mean: v1(0.0),
                covariance: DMatrix::from_element(1, 1, 0.5),
            },
            solver: SolverConfig::default(),
            seed: 4,
        }
    }

    #[test]
    fn zero_inputs_give_zero_path() {
        let s = symmetric(3.0);
        let basis = solve_path_basis(&s.atoms[0], &s.coupling, &s.grid).unwrap();
        let path = basis.path(&v1(0.0), &v1(0.0)).unwrap();
        assert!(path.values().iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn symmetric_split_is_even() {
        let solver = UniformSolver::new(&symmetric(3.0)).unwrap();
        let f = solver.fraction_map(&[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(f[0], 0.5, epsilon = 1e-12);
        let sol = solver.solve_lambda_bisection(1e-10).unwrap();
        assert_abs_diff_eq!(sol.lambda[0], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn decoupled_basis_matches_fixed_point() {
        let s = Scenario::two_site_example(0.0, CouplingMode::Cooperative, 1000);
        let solver = UniformSolver::new(&s).unwrap();
        let f0 = solver.fraction_map(&[0.0, 1.0]).unwrap();
        let f1 = solver.fraction_map(&[1.0, 0.0]).unwrap();
        assert_eq!(f0, f1);
        let mf = find_fixed_point(&s).unwrap();
        let lambda = solver.solve_lambda_bisection(1e-12).unwrap();
        assert!(lambda.xbar.sup_distance(&mf.xbar) < 1e-6);
    }

    #[test]
    fn fractions_stay_on_the_simplex() {
        let s = Scenario::two_site_example(20.0, CouplingMode::Cooperative, 400);
        let solver = UniformSolver::new(&s).unwrap();
        for lam in [0.0, 0.13, 0.5, 0.77, 1.0] {
            let f = solver.fraction_map(&[lam, 1.0 - lam]).unwrap();
            assert!(f.iter().all(|&v| v >= 0.0));
            assert_abs_diff_eq!(f.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn basis_fixed_point_is_fixed_for_the_generic_operator() {
        let s = Scenario::two_site_example(40.0, CouplingMode::Cooperative, 1000);
        let solver = UniformSolver::new(&s).unwrap();
        let sol = solver.solve_lambda_bisection(1e-10).unwrap();
        let image = solver.operator().apply(&sol.xbar).unwrap();
        let gap = image.sup_distance(&sol.xbar);
        assert!(gap < 1e-4, "{gap}");
    }

    #[test]
    fn offsets_follow_the_closed_form_sensitivities() {
        let s = Scenario::two_site_example(25.0, CouplingMode::Cooperative, 2000);
        let solver = UniformSolver::new(&s).unwrap();
        let op = solver.operator();
        let offset = |mu0: &DVector<f64>, p: &DVector<f64>| {
            let xbar = solver.basis().path(mu0, p).unwrap();
            let b = op.bundles(Some(&xbar)).unwrap();
            b[0][1].delta.first() - b[0][0].delta.first()
        };
        let zero = DVector::zeros(2);
        let base = offset(&zero, &zero);
        let (theta1, theta2) = solver.offset_sensitivities(0, 1).unwrap();
        let e = |i: usize| DVector::from_fn(2, |r, _| if r == i { 1.0 } else { 0.0 });
        for i in 0..2 {
            let d1 = offset(&e(i), &zero) - base;
            let d2 = offset(&zero, &e(i)) - base;
            let scale = theta1.amax().max(theta2.amax());
            assert!((d1 - theta1[i]).abs() < 1e-4 * scale, "θ¹[{i}]: {d1} vs {}", theta1[i]);
            assert!((d2 - theta2[i]).abs() < 1e-4 * scale, "θ²[{i}]: {d2} vs {}", theta2[i]);
        }
    }

    #[test]
    fn unequal_weights_are_rejected() {
        let mut s = Scenario::two_site_example(1.0, CouplingMode::Cooperative, 100);
        s.atoms[0].terminal_weights[1] = 1300.0;
        assert!(matches!(UniformSolver::new(&s), Err(Error::Validation { .. })));
    }
}
