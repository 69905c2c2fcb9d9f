//! Fixed-step integration kernels shared by every solver.
//!
//! All paths live on a uniform [`TimeGrid`]. The integrators are classical
//! fourth-order Runge-Kutta with no step control, so a result is a pure
//! function of `(rhs, boundary value, grid)`.
//!
//! Paths produced by an integrator also carry the right-hand side evaluated
//! at every grid point. [`SampledPath::dense`] uses those slopes for cubic
//! Hermite interpolation, which keeps the RK4 order when one solved path
//! drives another integration at half steps. [`eval_path`] is plain linear
//! interpolation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Uniform grid `t_k = k T / K`, `k = 0..=K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::validation("horizon", "must be finite and positive"));
        }
        if steps == 0 {
            return Err(Error::validation("steps", "must be a positive integer"));
        }
        Ok(Self { horizon, steps })
    }

    /// Default resolution: `dt <= 1e-3 T`.
    pub fn with_default_steps(horizon: f64) -> Result<Self> {
        Self::new(horizon, 1000)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Grid point `k`; `time(K) == T` exactly.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * (k as f64) / (self.steps as f64)
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.time(k))
    }

    /// Bracketing interval `k` and local coordinate `s in [0, 1]` with
    /// `t = t_k + s dt`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::OutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let steps = self.steps;
        let scaled = t * steps as f64 / self.horizon;
        let mut k = (scaled.floor() as usize).min(steps);
        if k < steps && self.time(k + 1) <= t {
            k += 1;
        }
        while k > 0 && self.time(k) > t {
            k -= 1;
        }
        if self.time(k) == t {
            return Ok(if k == steps { (steps - 1, 1.0) } else { (k, 0.0) });
        }
        let k = k.min(steps - 1);
        let s = ((t - self.time(k)) / self.dt()).clamp(0.0, 1.0);
        Ok((k, s))
    }
}

/// Minimal vector-space interface for the integrators.
pub trait OdeState: Clone {
    /// `self + scale * other`
    fn add_scaled(&self, scale: f64, other: &Self) -> Self;
    fn scaled(&self, scale: f64) -> Self;
    fn all_finite(&self) -> bool;
}

impl OdeState for f64 {
    fn add_scaled(&self, scale: f64, other: &Self) -> Self {
        self + scale * other
    }
    fn scaled(&self, scale: f64) -> Self {
        self * scale
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl OdeState for DVector<f64> {
    fn add_scaled(&self, scale: f64, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(scale, other, 1.0);
        out
    }
    fn scaled(&self, scale: f64) -> Self {
        self * scale
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl OdeState for DMatrix<f64> {
    fn add_scaled(&self, scale: f64, other: &Self) -> Self {
        let mut out = self.clone();
        out.zip_apply(other, |a, b| *a += scale * b);
        out
    }
    fn scaled(&self, scale: f64) -> Self {
        self * scale
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl<A: OdeState, B: OdeState> OdeState for (A, B) {
    fn add_scaled(&self, scale: f64, other: &Self) -> Self {
        (
            self.0.add_scaled(scale, &other.0),
            self.1.add_scaled(scale, &other.1),
        )
    }
    fn scaled(&self, scale: f64) -> Self {
        (self.0.scaled(scale), self.1.scaled(scale))
    }
    fn all_finite(&self) -> bool {
        self.0.all_finite() && self.1.all_finite()
    }
}

/// A function of time sampled on every point of a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath<V> {
    grid: TimeGrid,
    values: Vec<V>,
    slopes: Option<Vec<V>>,
}

impl<V: OdeState> SampledPath<V> {
    pub fn new(grid: TimeGrid, values: Vec<V>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.all_finite()) {
            return Err(Error::Diverged { index: k });
        }
        Ok(Self {
            grid,
            values,
            slopes: None,
        })
    }

    /// Path with known time derivatives at the grid points.
    pub fn with_slopes(grid: TimeGrid, values: Vec<V>, slopes: Vec<V>) -> Result<Self> {
        let mut path = Self::new(grid, values)?;
        if slopes.len() != grid.len() {
            return Err(Error::GridMismatch("slope count differs from grid".into()));
        }
        path.slopes = Some(slopes);
        Ok(path)
    }

    pub fn constant(grid: TimeGrid, value: V) -> Self {
        let zero = value.scaled(0.0);
        Self {
            grid,
            values: vec![value; grid.len()],
            slopes: Some(vec![zero; grid.len()]),
        }
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> V) -> Result<Self> {
        Self::new(grid, grid.times().map(f).collect())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[V] {
        &self.values
    }

    pub fn slopes(&self) -> Option<&[V]> {
        self.slopes.as_deref()
    }

    pub fn value(&self, k: usize) -> &V {
        &self.values[k]
    }

    pub fn first(&self) -> &V {
        &self.values[0]
    }

    pub fn last(&self) -> &V {
        &self.values[self.grid.steps]
    }

    /// Linear interpolation; exact at grid points.
    pub fn at(&self, t: f64) -> Result<V> {
        let (k, s) = self.grid.locate(t)?;
        Ok(self.lerp(k, s))
    }

    fn lerp(&self, k: usize, s: f64) -> V {
        if s == 0.0 {
            return self.values[k].clone();
        }
        if s == 1.0 {
            return self.values[k + 1].clone();
        }
        self.values[k]
            .scaled(1.0 - s)
            .add_scaled(s, &self.values[k + 1])
    }

    /// Cubic Hermite interpolation when slopes are known, linear otherwise.
    pub fn dense(&self, t: f64) -> Result<V> {
        let (k, s) = self.grid.locate(t)?;
        let Some(slopes) = &self.slopes else {
            return Ok(self.lerp(k, s));
        };
        if s == 0.0 {
            return Ok(self.values[k].clone());
        }
        if s == 1.0 {
            return Ok(self.values[k + 1].clone());
        }
        let dt = self.grid.dt();
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Ok(self.values[k]
            .scaled(h00)
            .add_scaled(h10 * dt, &slopes[k])
            .add_scaled(h01, &self.values[k + 1])
            .add_scaled(h11 * dt, &slopes[k + 1]))
    }

    /// `self + scale * other`, pointwise; slopes survive when both carry them.
    pub fn add_scaled(&self, scale: f64, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("paths on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.add_scaled(scale, b))
            .collect();
        let slopes = match (&self.slopes, &other.slopes) {
            (Some(a), Some(b)) => Some(
                a.iter()
                    .zip(b)
                    .map(|(x, y)| x.add_scaled(scale, y))
                    .collect(),
            ),
            _ => None,
        };
        Ok(Self {
            grid: self.grid,
            values,
            slopes,
        })
    }

    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v.scaled(scale)).collect(),
            slopes: self
                .slopes
                .as_ref()
                .map(|s| s.iter().map(|v| v.scaled(scale)).collect()),
        }
    }

    /// Pointwise map; slopes are dropped.
    pub fn map<W: OdeState>(&self, f: impl Fn(&V) -> W) -> Result<SampledPath<W>> {
        SampledPath::new(self.grid, self.values.iter().map(f).collect())
    }

    /// Pointwise map of a path that is linear in `V`, so slopes map the same way.
    pub fn map_linear<W: OdeState>(&self, f: impl Fn(&V) -> W) -> Result<SampledPath<W>> {
        let values = self.values.iter().map(&f).collect();
        match &self.slopes {
            Some(s) => SampledPath::with_slopes(self.grid, values, s.iter().map(&f).collect()),
            None => SampledPath::new(self.grid, values),
        }
    }

    pub fn into_values(self) -> Vec<V> {
        self.values
    }
}

impl SampledPath<DVector<f64>> {
    /// `sup_t |self(t) - other(t)|` over the grid, Euclidean norm in space.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

fn rk4_step<V, F>(rhs: &F, t: f64, y: &V, h: f64) -> (V, V)
where
    V: OdeState,
    F: Fn(f64, &V) -> V,
{
    let k1 = rhs(t, y);
    let k2 = rhs(t + 0.5 * h, &y.add_scaled(0.5 * h, &k1));
    let k3 = rhs(t + 0.5 * h, &y.add_scaled(0.5 * h, &k2));
    let k4 = rhs(t + h, &y.add_scaled(h, &k3));
    let next = y
        .add_scaled(h / 6.0, &k1)
        .add_scaled(h / 3.0, &k2)
        .add_scaled(h / 3.0, &k3)
        .add_scaled(h / 6.0, &k4);
    (next, k1)
}

/// RK4 from `t = T` down to `t = 0`; `path[K] == terminal` exactly.
pub fn integrate_backward<V, F>(rhs: F, terminal: V, grid: &TimeGrid) -> Result<SampledPath<V>>
where
    V: OdeState,
    F: Fn(f64, &V) -> V,
{
    integrate_backward_projected(rhs, terminal, grid, |v| v)
}

/// [`integrate_backward`] with a projection applied after every step.
pub fn integrate_backward_projected<V, F, P>(
    rhs: F,
    terminal: V,
    grid: &TimeGrid,
    project: P,
) -> Result<SampledPath<V>>
where
    V: OdeState,
    F: Fn(f64, &V) -> V,
    P: Fn(V) -> V,
{
    let steps = grid.steps();
    let h = grid.dt();
    if !terminal.all_finite() {
        return Err(Error::Diverged { index: steps });
    }
    let mut values = vec![terminal.clone(); steps + 1];
    let mut slopes = vec![terminal.scaled(0.0); steps + 1];
    let mut y = terminal;
    for k in (1..=steps).rev() {
        let (next, slope) = rk4_step(&rhs, grid.time(k), &y, -h);
        let next = project(next);
        if !next.all_finite() {
            return Err(Error::Diverged { index: k - 1 });
        }
        slopes[k] = slope;
        values[k - 1] = next.clone();
        y = next;
    }
    slopes[0] = rhs(0.0, &y);
    SampledPath::with_slopes(*grid, values, slopes)
}

/// RK4 from `t = 0` up to `t = T`; `path[0] == initial` exactly.
pub fn integrate_forward<V, F>(rhs: F, initial: V, grid: &TimeGrid) -> Result<SampledPath<V>>
where
    V: OdeState,
    F: Fn(f64, &V) -> V,
{
    let steps = grid.steps();
    let h = grid.dt();
    if !initial.all_finite() {
        return Err(Error::Diverged { index: 0 });
    }
    let mut values = Vec::with_capacity(steps + 1);
    let mut slopes = Vec::with_capacity(steps + 1);
    values.push(initial.clone());
    let mut y = initial;
    for k in 0..steps {
        let (next, slope) = rk4_step(&rhs, grid.time(k), &y, h);
        if !next.all_finite() {
            return Err(Error::Diverged { index: k + 1 });
        }
        slopes.push(slope);
        values.push(next.clone());
        y = next;
    }
    slopes.push(rhs(grid.horizon(), &y));
    SampledPath::with_slopes(*grid, values, slopes)
}

/// Linear interpolation of a path at `t`.
pub fn eval_path<V: OdeState>(path: &SampledPath<V>, t: f64) -> Result<V> {
    path.at(t)
}

/// Composite trapezoid rule over the path's grid.
pub fn quadrature(path: &SampledPath<f64>) -> f64 {
    trapezoid(path.values(), path.grid().dt())
}

/// Composite trapezoid rule for equally spaced samples.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values {
        [] | [_] => 0.0,
        [first, inner @ .., last] => dt * (0.5 * (first + last) + inner.iter().sum::<f64>()),
    }
}
