//! Infinite-population machinery: basins of attraction, the mean-path
//! operator `G`, its fixed point, assumption diagnostics and the limiting
//! social cost.
//!
//! `G(x̄)` is the expected trajectory of a generic agent best-responding to
//! `x̄`. Inside basin `D_j` the trajectory is affine in `x⁰`,
//! `x(t) = Ξ_j(t)x⁰ + b_j(t)`, so only the mass and first moment of `P₀` over
//! each basin are needed. They come from closed-form Gaussian half-space
//! integrals when `P₀` is Gaussian, there are two destinations and the basin
//! boundary is a hyperplane; otherwise from the sample list (the explicit
//! points, or a seeded Monte Carlo sample).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::numerics::{integrate_forward, trapezoid, SampledPath, TimeGrid};
use crate::riccati::{linear_cost_path, solve_gamma, solve_transition, state_transition, RiccatiBundle};
use crate::scenario::{EmpiricalMeasure, InitialDistribution, Scenario};

/// `f(x) = xᵀQx + wᵀx + c`; `x ∈ D_j` iff `f_jk(x) ≤ 0` for every `k ≠ j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadricRow {
    pub j: usize,
    pub k: usize,
    /// `½(Γ_j(0) - Γ_k(0))`, row-major.
    pub quadratic: Vec<f64>,
    /// `β_j(0) - β_k(0)`.
    pub linear: Vec<f64>,
    /// `δ_j(0) - δ_k(0)`.
    pub offset: f64,
}

impl QuadricRow {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut value = self.offset;
        for i in 0..n {
            let mut row = self.linear[i];
            for k in 0..n {
                row += self.quadratic[i * n + k] * x[k];
            }
            value += row * x[i];
        }
        value
    }
}

/// Basins of one type atom.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomBasins {
    pub destinations: usize,
    /// Ordered pairs `(j, k)`, `j ≠ k`, in row-major order of `(j, k)`.
    pub rows: Vec<QuadricRow>,
}

/// Pairwise basin inequalities from bundles solved against one mean path.
pub fn compute_basins(bundles: &[RiccatiBundle]) -> AtomBasins {
    let l = bundles.len();
    let mut rows = Vec::with_capacity(l * l.saturating_sub(1));
    for (j, bj) in bundles.iter().enumerate() {
        for (k, bk) in bundles.iter().enumerate() {
            if j == k {
                continue;
            }
            let quad = (bj.gamma.first() - bk.gamma.first()) * 0.5;
            rows.push(QuadricRow {
                j,
                k,
                quadratic: quad.transpose().as_slice().to_vec(),
                linear: (bj.beta.first() - bk.beta.first()).as_slice().to_vec(),
                offset: bj.delta.first() - bk.delta.first(),
            });
        }
    }
    AtomBasins {
        destinations: l,
        rows,
    }
}

impl AtomBasins {
    fn pair_rows(&self, j: usize) -> &[QuadricRow] {
        let per = self.destinations - 1;
        &self.rows[j * per..(j + 1) * per]
    }

    /// Index of the basin containing `x`; ties go to the smallest index.
    pub fn classify(&self, x: &[f64]) -> usize {
        if self.destinations == 1 {
            return 0;
        }
        let mut fallback = (f64::INFINITY, 0);
        for j in 0..self.destinations {
            let worst = self
                .pair_rows(j)
                .iter()
                .map(|row| row.eval(x))
                .fold(f64::NEG_INFINITY, f64::max);
            if worst <= 0.0 {
                return j;
            }
            if worst < fallback.0 {
                fallback = (worst, j);
            }
        }
        // Rounding can leave every inequality marginally violated.
        fallback.1
    }

    /// True when every boundary is a hyperplane (all `Γ_j(0)` coincide).
    pub fn is_halfspace(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.quadratic.iter().all(|&v| v == 0.0))
    }

    /// Smallest `|f_jk(x)|` over all pairs.
    pub fn boundary_gap(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|r| r.eval(x).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasinClassifier {
    pub atoms: Vec<AtomBasins>,
}

impl BasinClassifier {
    pub fn classify(&self, atom: usize, x: &[f64]) -> usize {
        self.atoms[atom].classify(x)
    }
}

/// Mass, first and second moment of `P₀` restricted to one basin.
#[derive(Debug, Clone, PartialEq)]
pub struct BasinMoments {
    pub mass: f64,
    pub first: DVector<f64>,
    pub second: DMatrix<f64>,
}

impl BasinMoments {
    fn zeros(n: usize) -> Self {
        Self {
            mass: 0.0,
            first: DVector::zeros(n),
            second: DMatrix::zeros(n, n),
        }
    }
}

/// Moments of `N(mean, cov)` over `{x : wᵀx ≤ c}`.
pub fn gaussian_halfspace(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    w: &DVector<f64>,
    c: f64,
) -> BasinMoments {
    let spread = w.dot(&(cov * w));
    let total_second = cov + mean * mean.transpose();
    if spread <= 0.0 {
        // Degenerate direction: the whole mass is on one side.
        if w.dot(mean) <= c {
            return BasinMoments {
                mass: 1.0,
                first: mean.clone(),
                second: total_second,
            };
        }
        return BasinMoments::zeros(mean.len());
    }
    let s = spread.sqrt();
    let z = (c - w.dot(mean)) / s;
    let normal = Normal::standard();
    let cdf = normal.cdf(z);
    let pdf = normal.pdf(z);
    // x = μ + vζ + ε with ζ ~ N(0,1) along w and ε independent of ζ.
    let v = cov * w / s;
    let vvt = &v * v.transpose();
    let first = mean * cdf - &v * pdf;
    let cross = mean * v.transpose() + &v * mean.transpose();
    let second = (mean * mean.transpose() + cov - &vvt) * cdf - cross * pdf + vvt * (cdf - z * pdf);
    BasinMoments {
        mass: cdf,
        first,
        second,
    }
}

/// Rows of samples handled per parallel task; fixes the summation order.
const CHUNK: usize = 4096;

fn sample_moments(measure: &EmpiricalMeasure, basins: &AtomBasins) -> Vec<BasinMoments> {
    let n = measure.dim();
    let l = basins.destinations;
    let chunks: Vec<Vec<(f64, Vec<f64>, Vec<f64>)>> = (0..measure.len())
        .step_by(CHUNK)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&start| {
            let mut acc = vec![(0.0, vec![0.0; n], vec![0.0; n * n]); l];
            for i in start..(start + CHUNK).min(measure.len()) {
                let x = measure.point(i);
                let slot = &mut acc[basins.classify(x)];
                slot.0 += 1.0;
                for a in 0..n {
                    slot.1[a] += x[a];
                    for b in 0..n {
                        slot.2[a * n + b] += x[a] * x[b];
                    }
                }
            }
            acc
        })
        .collect();
    let scale = measure.mass();
    (0..l)
        .map(|j| {
            let mut out = BasinMoments::zeros(n);
            for chunk in &chunks {
                out.mass += chunk[j].0;
                out.first += DVector::from_column_slice(&chunk[j].1);
                out.second += DMatrix::from_row_slice(n, n, &chunk[j].2);
            }
            out.mass *= scale;
            out.first *= scale;
            out.second *= scale;
            out
        })
        .collect()
}

/// How expectations over `P₀` are taken.
#[derive(Debug, Clone)]
enum Expectation {
    Gaussian {
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        fallback: EmpiricalMeasure,
    },
    Points(EmpiricalMeasure),
}

/// Result of one application of `G`.
#[derive(Debug, Clone)]
pub struct GStep {
    pub output: SampledPath<DVector<f64>>,
    /// `[atom][destination]`, solved against the input path.
    pub bundles: Vec<Vec<RiccatiBundle>>,
    pub classifier: BasinClassifier,
    /// `[atom][destination]`.
    pub moments: Vec<Vec<BasinMoments>>,
}

/// `G` with everything that does not depend on the mean path precomputed.
#[derive(Debug, Clone)]
pub struct MeanFieldOperator {
    scenario: Scenario,
    gammas: Vec<Vec<Arc<SampledPath<DMatrix<f64>>>>>,
    transitions: Vec<Vec<SampledPath<DMatrix<f64>>>>,
    expectation: Expectation,
}

impl MeanFieldOperator {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let grid = scenario.grid;
        let pairs: Vec<(usize, usize)> = (0..scenario.atoms.len())
            .flat_map(|a| (0..scenario.destination_count()).map(move |j| (a, j)))
            .collect();
        let solved: Vec<(Arc<SampledPath<DMatrix<f64>>>, SampledPath<DMatrix<f64>>)> = pairs
            .par_iter()
            .map(|&(a, j)| {
                let atom = &scenario.atoms[a];
                let gamma = solve_gamma(atom, j, scenario.coupling.q, &grid)?;
                let xi = state_transition(&atom.a, &atom.input_gain(), &gamma)?;
                Ok((Arc::new(gamma), xi))
            })
            .collect::<Result<_>>()?;
        let l = scenario.destination_count();
        let mut gammas = vec![Vec::with_capacity(l); scenario.atoms.len()];
        let mut transitions = vec![Vec::with_capacity(l); scenario.atoms.len()];
        for ((a, _), (g, xi)) in pairs.iter().zip(solved) {
            gammas[*a].push(g);
            transitions[*a].push(xi);
        }
        let expectation = match &scenario.initial {
            InitialDistribution::Gaussian { mean, covariance } => Expectation::Gaussian {
                mean: mean.clone(),
                covariance: covariance.clone(),
                fallback: scenario
                    .initial
                    .measure(scenario.solver.mc_samples, scenario.seed),
            },
            InitialDistribution::Points(points) => {
                Expectation::Points(EmpiricalMeasure::from_points(points))
            }
        };
        Ok(Self {
            scenario: scenario.clone(),
            gammas,
            transitions,
            expectation,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.scenario.grid
    }

    /// Sample list used when no closed form applies.
    pub fn samples(&self) -> &EmpiricalMeasure {
        match &self.expectation {
            Expectation::Gaussian { fallback, .. } => fallback,
            Expectation::Points(m) => m,
        }
    }

    /// `Γ_j^θ`, independent of the mean path.
    pub fn gamma(&self, atom: usize, j: usize) -> &Arc<SampledPath<DMatrix<f64>>> {
        &self.gammas[atom][j]
    }

    /// `Φ_j^θ(0, t)ᵀ`.
    pub fn state_transition(&self, atom: usize, j: usize) -> &SampledPath<DMatrix<f64>> {
        &self.transitions[atom][j]
    }

    /// Mean of `P₀` propagated by the weight-averaged uncontrolled drift.
    pub fn initial_guess(&self) -> Result<SampledPath<DVector<f64>>> {
        let n = self.scenario.state_dim();
        let mut drift = DMatrix::zeros(n, n);
        for atom in &self.scenario.atoms {
            drift += &atom.a * atom.weight;
        }
        let mean = self.scenario.initial.mean();
        integrate_forward(|_, x: &DVector<f64>| &drift * x, mean, self.grid())
    }

    /// All `(atom, destination)` bundles against `xbar` (or against a
    /// vanishing mean path when `None`).
    pub fn bundles(
        &self,
        xbar: Option<&SampledPath<DVector<f64>>>,
    ) -> Result<Vec<Vec<RiccatiBundle>>> {
        if let Some(x) = xbar {
            if x.grid() != self.grid() {
                return Err(Error::GridMismatch("mean path grid differs from the scenario".into()));
            }
        }
        let linear = linear_cost_path(&self.scenario.coupling, xbar)?;
        let l = self.scenario.destination_count();
        (0..self.scenario.atoms.len())
            .map(|a| {
                (0..l)
                    .into_par_iter()
                    .map(|j| {
                        RiccatiBundle::with_gamma(
                            &self.scenario.atoms[a],
                            j,
                            &self.scenario.destinations[j],
                            self.scenario.coupling.q,
                            Arc::clone(&self.gammas[a][j]),
                            linear.clone(),
                        )
                    })
                    .collect()
            })
            .collect()
    }

    /// Mass and moments of `P₀` over each basin of one atom.
    pub fn moments(&self, basins: &AtomBasins) -> Vec<BasinMoments> {
        match &self.expectation {
            Expectation::Gaussian {
                mean,
                covariance,
                fallback,
            } => {
                let l = basins.destinations;
                if l == 1 {
                    return vec![BasinMoments {
                        mass: 1.0,
                        first: mean.clone(),
                        second: covariance + mean * mean.transpose(),
                    }];
                }
                if l == 2 && basins.is_halfspace() {
                    let row = &basins.rows[0];
                    let w = DVector::from_column_slice(&row.linear);
                    let c = -row.offset;
                    return vec![
                        gaussian_halfspace(mean, covariance, &w, c),
                        gaussian_halfspace(mean, covariance, &(-w), -c),
                    ];
                }
                sample_moments(fallback, basins)
            }
            Expectation::Points(measure) => sample_moments(measure, basins),
        }
    }

    /// `Σ_θ w_θ Σ_j [Ξ_j(t) m_j + P(D_j) b_j(t)]` with the zero-state
    /// responses `b_j` of the given bundles.
    pub fn propagate(
        &self,
        bundles: &[Vec<RiccatiBundle>],
        moments: &[Vec<BasinMoments>],
    ) -> Result<SampledPath<DVector<f64>>> {
        let grid = *self.grid();
        let n = self.scenario.state_dim();
        let mut values = vec![DVector::zeros(n); grid.len()];
        let mut slopes = vec![DVector::zeros(n); grid.len()];
        for (a, atom) in self.scenario.atoms.iter().enumerate() {
            let responses: Vec<SampledPath<DVector<f64>>> = bundles[a]
                .par_iter()
                .map(|b| b.zero_state_response())
                .collect::<Result<_>>()?;
            for (j, response) in responses.iter().enumerate() {
                let mj = &moments[a][j];
                let weight = atom.weight;
                let xi = &self.transitions[a][j];
                let xi_slopes = xi.slopes().expect("integrated path");
                let b_slopes = response.slopes().expect("integrated path");
                for k in 0..grid.len() {
                    values[k] += (xi.value(k) * &mj.first + response.value(k) * mj.mass) * weight;
                    slopes[k] += (&xi_slopes[k] * &mj.first + &b_slopes[k] * mj.mass) * weight;
                }
            }
        }
        SampledPath::with_slopes(grid, values, slopes)
    }

    /// One application of `G`, keeping the intermediate pieces.
    pub fn evaluate(&self, xbar: &SampledPath<DVector<f64>>) -> Result<GStep> {
        let bundles = self.bundles(Some(xbar))?;
        let classifier = BasinClassifier {
            atoms: bundles.iter().map(|b| compute_basins(b)).collect(),
        };
        let moments: Vec<Vec<BasinMoments>> =
            classifier.atoms.iter().map(|b| self.moments(b)).collect();
        let output = self.propagate(&bundles, &moments)?;
        Ok(GStep {
            output,
            bundles,
            classifier,
            moments,
        })
    }

    pub fn apply(&self, xbar: &SampledPath<DVector<f64>>) -> Result<SampledPath<DVector<f64>>> {
        Ok(self.evaluate(xbar)?.output)
    }
}

/// A mean path with `G(x̄) ≈ x̄` and everything computed against it.
#[derive(Debug, Clone)]
pub struct MeanFieldSolution {
    pub xbar: SampledPath<DVector<f64>>,
    pub bundles: Vec<Vec<RiccatiBundle>>,
    pub classifier: BasinClassifier,
    pub moments: Vec<Vec<BasinMoments>>,
    /// `sup_t |G(x̄)(t) - x̄(t)|` at the returned path.
    pub residual: f64,
    /// Number of Picard updates performed.
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub scenario: Scenario,
}

impl MeanFieldSolution {
    /// Fraction of the population choosing each destination.
    pub fn fractions(&self) -> Vec<f64> {
        let l = self.scenario.destination_count();
        let mut out = vec![0.0; l];
        for (atom, moments) in self.scenario.atoms.iter().zip(&self.moments) {
            for (j, m) in moments.iter().enumerate() {
                out[j] += atom.weight * m.mass;
            }
        }
        out
    }

    pub fn classify(&self, atom: usize, x0: &[f64]) -> usize {
        self.classifier.classify(atom, x0)
    }

    pub fn bundle(&self, atom: usize, j: usize) -> &RiccatiBundle {
        &self.bundles[atom][j]
    }
}

fn picard_step(
    x: &SampledPath<DVector<f64>>,
    g: &SampledPath<DVector<f64>>,
    alpha: f64,
) -> Result<SampledPath<DVector<f64>>> {
    if alpha == 1.0 {
        return Ok(g.clone());
    }
    x.scaled(1.0 - alpha).add_scaled(alpha, g)
}

/// Damped Picard iteration `x̄ ← (1-α)x̄ + αG(x̄)` from
/// [`MeanFieldOperator::initial_guess`].
///
/// The damping starts at `solver.damping` and is halved (down to 0.05)
/// whenever the residual fails to drop by 5% over an iteration, at most
/// once every three iterations. With `q = 0`, `G` is constant and a single
/// undamped step is exact.
pub fn find_fixed_point(scenario: &Scenario) -> Result<MeanFieldSolution> {
    let op = MeanFieldOperator::new(scenario)?;
    let start = op.initial_guess()?;
    find_fixed_point_from(&op, start)
}

pub fn find_fixed_point_from(
    op: &MeanFieldOperator,
    start: SampledPath<DVector<f64>>,
) -> Result<MeanFieldSolution> {
    let solver = op.scenario.solver;
    let decoupled = op.scenario.coupling.q == 0.0;
    let mut alpha = solver.damping;
    let mut last_shrink = 0;
    let mut history = Vec::new();
    let mut x = start;
    // The first evaluation is not a Picard update, hence max_iter + 1.
    for evaluation in 0..=solver.max_iter {
        let step = op.evaluate(&x)?;
        let residual = step.output.sup_distance(&x);
        history.push(residual);
        if residual <= solver.tol {
            return Ok(MeanFieldSolution {
                xbar: x,
                bundles: step.bundles,
                classifier: step.classifier,
                moments: step.moments,
                residual,
                iterations: evaluation,
                residual_history: history,
                scenario: op.scenario.clone(),
            });
        }
        if evaluation == solver.max_iter {
            break;
        }
        if let [.., prev, _] = history[..] {
            if residual >= 0.95 * prev && evaluation - last_shrink >= 3 {
                alpha = (alpha * 0.5).max(0.05);
                last_shrink = evaluation;
            }
        }
        x = picard_step(&x, &step.output, if decoupled { 1.0 } else { alpha })?;
    }
    Err(Error::NonConvergence { residuals: history })
}

/// Diagnostics for the sufficient conditions of existence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    /// `sqrt(max(k1 + k2, k3)) T`.
    pub bound: f64,
    /// `bound < π/2`.
    pub bound_holds: bool,
    /// Eigenvalues of the symmetric part of `L`, ascending.
    pub l_eigenvalues: Vec<f64>,
    /// `L ⪰ 0`.
    pub l_psd: bool,
    /// `E|x⁰|²`.
    pub second_moment: f64,
    pub second_moment_finite: bool,
}

/// Largest spectral norm over a path of matrices.
fn max_norm(path: &SampledPath<DMatrix<f64>>) -> f64 {
    path.values()
        .iter()
        .map(|m| m.clone().singular_values().max())
        .fold(0.0, f64::max)
}

/// Points per axis used for the triple maximum in `k3`.
const K3_POINTS: usize = 64;

/// Evaluates `k1`, `k2`, `k3` by maximizing over the atoms and the grid
/// (`k3` over a subgrid of at most 64 points per time axis), and the sign of
/// `L`.
pub fn check_assumptions(scenario: &Scenario) -> Result<AssumptionReport> {
    let op = MeanFieldOperator::new(scenario)?;
    let grid = scenario.grid;
    let coupling = &scenario.coupling;
    let l = scenario.destination_count();
    let samples = op.samples();
    let mean_norm: f64 = match &scenario.initial {
        InitialDistribution::Points(points) => {
            points.iter().map(|p| p.norm()).sum::<f64>() / points.len() as f64
        }
        InitialDistribution::Gaussian { .. } => {
            samples
                .points()
                .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
                .sum::<f64>()
                * samples.mass()
        }
    };
    let free = op.bundles(None)?;
    let cost_matrix = coupling.cost_matrix();
    let stride = grid.steps().div_ceil(K3_POINTS - 1).max(1);
    let sub: Vec<usize> = (0..=grid.steps()).step_by(stride).chain([grid.steps()]).collect();

    let mut k1_sum = vec![0.0; l];
    let mut k2_sum = vec![0.0; l];
    let mut k3_sum = vec![0.0; l];
    for (a, atom) in scenario.atoms.iter().enumerate() {
        for j in 0..l {
            k1_sum[j] = f64::max(k1_sum[j], max_norm(op.state_transition(a, j)));
            let response = free[a][j].zero_state_response()?;
            let k2 = response.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
            k2_sum[j] = f64::max(k2_sum[j], k2);
            if coupling.q == 0.0 {
                continue;
            }
            let tr = solve_transition(atom, op.gamma(a, j))?;
            let inverses: Vec<DMatrix<f64>> = sub
                .iter()
                .map(|&k| {
                    tr.phi
                        .value(k)
                        .clone()
                        .try_inverse()
                        .ok_or_else(|| Error::Singular(format!("Φ(t_{k}, 0)")))
                })
                .collect::<Result<_>>()?;
            let bbt = &atom.b * atom.b.transpose();
            let scale = coupling.q / atom.r;
            let mut best: f64 = 0.0;
            for &s in &sub {
                let p_s = tr.phi.value(s);
                for inv_t in &inverses {
                    // Φ(σ,t)ᵀ B Bᵀ Φ(σ,τ) K = (P_σ P_t⁻¹)ᵀ B Bᵀ P_σ P_τ⁻¹ K
                    let left = (p_s * inv_t).transpose() * &bbt * p_s;
                    for inv_tau in &inverses {
                        let m = &left * inv_tau * &cost_matrix;
                        best = best.max(scale * m.singular_values().max());
                    }
                }
            }
            k3_sum[j] = f64::max(k3_sum[j], best);
        }
    }
    let k1 = mean_norm * k1_sum.iter().sum::<f64>();
    let k2 = k2_sum.iter().sum::<f64>();
    let k3 = k3_sum.iter().sum::<f64>();
    let bound = (k1 + k2).max(k3).sqrt() * grid.horizon();

    let lm = coupling.l_matrix();
    let sym = (&lm + lm.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let second_moment = scenario.initial.second_moment();
    Ok(AssumptionReport {
        k1,
        k2,
        k3,
        bound,
        bound_holds: bound < std::f64::consts::FRAC_PI_2,
        l_psd: eig[0] >= -1e-12 * eig.iter().fold(1.0, |m: f64, v| m.max(v.abs())),
        l_eigenvalues: eig,
        second_moment,
        second_moment_finite: second_moment.is_finite(),
    })
}

/// `∫ x̄ᵀ W x̄ dt` by trapezoid quadrature.
fn path_form(xbar: &SampledPath<DVector<f64>>, w: &DMatrix<f64>) -> f64 {
    let values: Vec<f64> = xbar.values().iter().map(|x| x.dot(&(w * x))).collect();
    trapezoid(&values, xbar.grid().dt())
}

/// Expected branch cost under the basin partition,
/// `Σ_θ w_θ Σ_j E[1_{D_j}(½x⁰ᵀΓ_j(0)x⁰ + β_j(0)ᵀx⁰ + δ_j(0))]`.
pub fn expected_branch_cost(solution: &MeanFieldSolution) -> f64 {
    let mut total = 0.0;
    for (a, atom) in solution.scenario.atoms.iter().enumerate() {
        for (j, m) in solution.moments[a].iter().enumerate() {
            let b = &solution.bundles[a][j];
            let quad = 0.5 * b.gamma.first().component_mul(&m.second).sum();
            total += atom.weight * (quad + b.beta.first().dot(&m.first) + b.delta.first() * m.mass);
        }
    }
    total
}

/// Per-agent social cost of the limiting population,
/// `E[branch cost] - q∫x̄ᵀKx̄ + (q/2)∫x̄ᵀLx̄`, which for the cooperative
/// coupling (`K = L`) is `E[branch cost] - (q/2)∫x̄ᵀLx̄`.
pub fn asymptotic_social_cost(solution: &MeanFieldSolution) -> f64 {
    let coupling = &solution.scenario.coupling;
    let mut cost = expected_branch_cost(solution);
    if coupling.q != 0.0 {
        cost -= coupling.q * path_form(&solution.xbar, &coupling.cost_matrix());
        cost += 0.5 * coupling.q * path_form(&solution.xbar, &coupling.l_matrix());
    }
    cost
}
