//! Evolution families of the discretized non-autonomous operator, mild
//! (Duhamel) solutions, adjoint propagation and regularity diagnostics.
//!
//! The one-step factor of the default scheme is the midpoint Cayley map
//! `(G_H + ½Δt S(t_mid))⁻¹ (G_H − ½Δt S(t_mid))`, which is a contraction in
//! the H-norm whenever the symmetric part of `S(t_mid)` is positive
//! semidefinite. Propagators store only one-step factors; two-parameter
//! operators `E(t, s)` are composed on demand.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::{GalerkinSpace, Projection, TimeForm};

/// Uniform grid `0 = t_0 < … < t_n = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be at least 1".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j >= self.n_steps {
            self.horizon
        } else {
            j as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |j| self.node(j))
    }

    pub fn midpoint(&self, j: usize) -> f64 {
        0.5 * (self.node(j) + self.node(j + 1))
    }

    /// Trapezoid weights on the nodes.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.n_steps)
            .map(|j| if j == 0 || j == self.n_steps { 0.5 * dt } else { dt })
            .collect()
    }

    /// Same grid with half the step.
    pub fn refined(&self) -> TimeGrid {
        TimeGrid {
            horizon: self.horizon,
            n_steps: 2 * self.n_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Midpoint Cayley (Crank–Nicolson) step; second order, H-contractive.
    #[default]
    Cayley,
    /// Backward Euler with the form frozen at the right endpoint.
    ImplicitEuler,
}

/// Composed one-step factors of the discrete evolution family.
#[derive(Debug, Clone)]
pub struct Propagator {
    grid: TimeGrid,
    scheme: Scheme,
    step_factors: Vec<DMatrix<f64>>,
    /// Maps a source value (in H-coordinates) to its contribution over one step.
    source_factors: Vec<DMatrix<f64>>,
}

impl Propagator {
    pub fn build(form: &TimeForm, grid: &TimeGrid, scheme: Scheme) -> Result<Self> {
        check_horizon(form, grid)?;
        let gram = form.space().gram_h();
        let dt = grid.dt();
        let mut step_factors = Vec::with_capacity(grid.n_steps());
        let mut source_factors = Vec::with_capacity(grid.n_steps());
        for j in 0..grid.n_steps() {
            let (lhs, rhs) = match scheme {
                Scheme::Cayley => {
                    let s = form.stiffness_unchecked(grid.midpoint(j)) * (0.5 * dt);
                    (gram + &s, gram - &s)
                }
                Scheme::ImplicitEuler => {
                    let s = form.stiffness_unchecked(grid.node(j + 1)) * dt;
                    (gram + &s, gram.clone())
                }
            };
            let lu = lhs.lu();
            let step = lu.solve(&rhs).ok_or(Error::SingularStep { step: j })?;
            let source = lu.solve(gram).ok_or(Error::SingularStep { step: j })?;
            if step.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularStep { step: j });
            }
            step_factors.push(step);
            source_factors.push(source);
        }
        Ok(Self {
            grid: *grid,
            scheme,
            step_factors,
            source_factors,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Approximation of `E(t_{j+1}, t_j)`.
    pub fn step_factor(&self, j: usize) -> &DMatrix<f64> {
        &self.step_factors[j]
    }

    pub fn step_factors(&self) -> &[DMatrix<f64>] {
        &self.step_factors
    }

    /// `E(t_t, t_s) x` for node indices `s ≤ t`.
    pub fn apply(&self, t: usize, s: usize, x: &DVector<f64>) -> DVector<f64> {
        assert!(s <= t && t <= self.grid.n_steps(), "need s <= t <= n_steps");
        let mut y = x.clone();
        for j in s..t {
            y = &self.step_factors[j] * y;
        }
        y
    }

    /// `E(t_t, t_s)` as a matrix.
    pub fn matrix(&self, t: usize, s: usize) -> DMatrix<f64> {
        assert!(s <= t && t <= self.grid.n_steps(), "need s <= t <= n_steps");
        let n = self.step_factors.first().map_or(0, |m| m.nrows());
        let mut m = DMatrix::identity(n, n);
        for j in s..t {
            m = &self.step_factors[j] * m;
        }
        m
    }

    fn advance_with_source(&self, j: usize, u: &DVector<f64>, f_left: &DVector<f64>, f_right: &DVector<f64>) -> DVector<f64> {
        let dt = self.grid.dt();
        let src = match self.scheme {
            Scheme::Cayley => (f_left + f_right) * (0.5 * dt),
            Scheme::ImplicitEuler => f_right * dt,
        };
        &self.step_factors[j] * u + &self.source_factors[j] * src
    }
}

/// Discrete path on a grid with its norm accumulators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub values: Vec<DVector<f64>>,
    pub h_norms: Vec<f64>,
    pub v_norms: Vec<f64>,
    /// `‖u‖_{L²(0,T;H)}` by the trapezoid rule.
    pub l2_h: f64,
    /// `‖u‖_{H¹(0,T;H)}`: trapezoid `‖u‖²_{L²(H)}` plus forward-difference `‖u′‖²_{L²(H)}`.
    pub sobolev_h1: f64,
    /// `‖u‖_{L²(0,T;V)}` by the trapezoid rule.
    pub l2_v: f64,
    /// `‖A(·)u(·)‖_{L²(0,T;H)}` by the trapezoid rule.
    pub au_l2: f64,
}

impl Trajectory {
    /// Builds a trajectory and its accumulators; `form` supplies `A(t)`.
    pub fn new(form: &TimeForm, grid: TimeGrid, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_nodes(),
                got: values.len(),
            });
        }
        let space = form.space();
        for v in &values {
            space.check_dim(v)?;
        }
        let weights = grid.trapezoid_weights();
        let h_norms: Vec<f64> = values.iter().map(|v| space.h_norm(v)).collect();
        let v_norms: Vec<f64> = values.iter().map(|v| space.v_norm(v)).collect();
        let l2_h_sq: f64 = weights.iter().zip(&h_norms).map(|(w, n)| w * n * n).sum();
        let l2_v_sq: f64 = weights.iter().zip(&v_norms).map(|(w, n)| w * n * n).sum();
        let dt = grid.dt();
        let deriv_sq: f64 = values
            .windows(2)
            .map(|w| {
                let d = (&w[1] - &w[0]) / dt;
                space.h_inner(&d, &d) * dt
            })
            .sum();
        let au_sq: f64 = values
            .iter()
            .zip(grid.nodes())
            .zip(&weights)
            .map(|((u, t), w)| {
                let su = form.stiffness_unchecked(t) * u;
                // ‖G⁻¹ S u‖²_H = (S u)ᵀ G⁻¹ (S u)
                w * su.dot(&(space.gram_h_inv() * &su))
            })
            .sum();
        Ok(Self {
            grid,
            values,
            h_norms,
            v_norms,
            l2_h: l2_h_sq.sqrt(),
            sobolev_h1: (l2_h_sq + deriv_sq).sqrt(),
            l2_v: l2_v_sq.sqrt(),
            au_l2: au_sq.max(0.0).sqrt(),
        })
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.values[0]
    }

    pub fn last(&self) -> &DVector<f64> {
        self.values.last().expect("trajectory has at least two nodes")
    }

    /// Sum entering the maximal-regularity estimate.
    pub fn regularity_norm(&self) -> f64 {
        self.sobolev_h1 + self.l2_v + self.au_l2
    }

    /// `‖t·u(t)‖_{L²(0,T;V)}`, the time-weighted smoothing diagnostic.
    pub fn time_weighted_l2_v(&self) -> f64 {
        self.grid
            .trapezoid_weights()
            .iter()
            .zip(self.grid.nodes())
            .zip(&self.v_norms)
            .map(|((w, t), n)| w * (t * n).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest `‖u(t)‖_H − ‖u(s)‖_H` over consecutive nodes.
    pub fn max_norm_increase(&self) -> f64 {
        self.h_norms
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Value at time `t` by piecewise-linear interpolation.
    pub fn interpolate(&self, t: f64) -> DVector<f64> {
        let dt = self.grid.dt();
        let n = self.grid.n_steps();
        let x = (t / dt).clamp(0.0, n as f64);
        let j = (x.floor() as usize).min(n - 1);
        let theta = x - j as f64;
        &self.values[j] * (1.0 - theta) + &self.values[j + 1] * theta
    }

    /// Writes `t, c_1 … c_n, h_norm, v_norm` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.values.first().map_or(0, |v| v.len());
        let mut header = String::from("t");
        for k in 1..=n {
            header.push_str(&format!(",c{k}"));
        }
        header.push_str(",h_norm,v_norm");
        writeln!(out, "{header}")?;
        for (j, t) in self.grid.nodes().enumerate() {
            let mut row = format!("{t}");
            for c in self.values[j].iter() {
                row.push_str(&format!(",{c}"));
            }
            row.push_str(&format!(",{},{}", self.h_norms[j], self.v_norms[j]));
            writeln!(out, "{row}")?;
        }
        Ok(())
    }
}

/// Trapezoid `‖u‖_{L²(0,T;H)}` of a node-sampled path.
pub fn l2_h_norm(space: &GalerkinSpace, grid: &TimeGrid, values: &[DVector<f64>]) -> f64 {
    grid.trapezoid_weights()
        .iter()
        .zip(values)
        .map(|(w, v)| w * space.h_inner(v, v))
        .sum::<f64>()
        .sqrt()
}

/// Supremum over nodes of `‖a_j − b_j‖_H`.
pub fn sup_h_distance(space: &GalerkinSpace, a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| space.h_norm(&(x - y)))
        .fold(0.0, f64::max)
}

fn check_horizon(form: &TimeForm, grid: &TimeGrid) -> Result<()> {
    if (form.horizon() - grid.horizon()).abs() > 1e-12 * form.horizon() {
        return Err(Error::InvalidParameter(format!(
            "grid horizon {} differs from form horizon {}",
            grid.horizon(),
            form.horizon()
        )));
    }
    Ok(())
}

fn effective_form(form: &TimeForm, proj: Option<&Projection>) -> Result<TimeForm> {
    match proj {
        Some(p) => form.projected(p),
        None => Ok(form.clone()),
    }
}

/// Homogeneous solution `u′ + A_m(t)u = 0`, `u(0) = x`.
pub fn propagate(form: &TimeForm, proj: Option<&Projection>, grid: &TimeGrid, x: &DVector<f64>, scheme: Scheme) -> Result<Trajectory> {
    form.space().check_dim(x)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial value".into()));
    }
    let eff = effective_form(form, proj)?;
    let prop = Propagator::build(&eff, grid, scheme)?;
    propagate_with(&eff, &prop, x)
}

/// Homogeneous solution using a prebuilt propagator of `form`.
pub fn propagate_with(form: &TimeForm, prop: &Propagator, x: &DVector<f64>) -> Result<Trajectory> {
    let mut values = Vec::with_capacity(prop.grid.n_nodes());
    values.push(x.clone());
    for j in 0..prop.grid.n_steps() {
        let next = prop.step_factor(j) * &values[j];
        values.push(next);
    }
    Trajectory::new(form, prop.grid, values)
}

fn check_source(space: &GalerkinSpace, grid: &TimeGrid, f_values: &[DVector<f64>]) -> Result<()> {
    if f_values.len() != grid.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: grid.n_nodes(),
            got: f_values.len(),
        });
    }
    for f in f_values {
        space.check_dim(f)?;
    }
    Ok(())
}

/// Solution of `u′ + A_m(t)u = f`, `u(0) = x` with trapezoidal source
/// treatment (Cayley) or right-endpoint source (implicit Euler).
pub fn duhamel_solve(
    form: &TimeForm,
    proj: Option<&Projection>,
    grid: &TimeGrid,
    x: &DVector<f64>,
    f_values: &[DVector<f64>],
    scheme: Scheme,
) -> Result<Trajectory> {
    form.space().check_dim(x)?;
    check_source(form.space(), grid, f_values)?;
    let eff = effective_form(form, proj)?;
    let prop = Propagator::build(&eff, grid, scheme)?;
    duhamel_with(&eff, &prop, x, f_values)
}

/// [`duhamel_solve`] with a prebuilt propagator of `form`.
pub fn duhamel_with(form: &TimeForm, prop: &Propagator, x: &DVector<f64>, f_values: &[DVector<f64>]) -> Result<Trajectory> {
    Trajectory::new(form, prop.grid, duhamel_values(prop, x, f_values))
}

pub(crate) fn duhamel_values(prop: &Propagator, x: &DVector<f64>, f_values: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut values = Vec::with_capacity(prop.grid.n_nodes());
    values.push(x.clone());
    for j in 0..prop.grid.n_steps() {
        let next = prop.advance_with_source(j, &values[j], &f_values[j], &f_values[j + 1]);
        values.push(next);
    }
    values
}

/// Cross-check path: `E(t_k, 0)x + Σ_{j<k} E(t_k, t_j) f(t_j) Δt`.
pub fn duhamel_sum(
    form: &TimeForm,
    proj: Option<&Projection>,
    grid: &TimeGrid,
    x: &DVector<f64>,
    f_values: &[DVector<f64>],
    scheme: Scheme,
) -> Result<Trajectory> {
    form.space().check_dim(x)?;
    check_source(form.space(), grid, f_values)?;
    let eff = effective_form(form, proj)?;
    let prop = Propagator::build(&eff, grid, scheme)?;
    let dt = grid.dt();
    let mut homogeneous = x.clone();
    let mut integral = DVector::zeros(x.len());
    let mut values = Vec::with_capacity(grid.n_nodes());
    values.push(x.clone());
    for j in 0..grid.n_steps() {
        let e = prop.step_factor(j);
        homogeneous = e * homogeneous;
        integral = e * (integral + &f_values[j] * dt);
        values.push(&homogeneous + &integral);
    }
    Trajectory::new(&eff, *grid, values)
}

/// `E(t, s)* x` through the reversed form, `E(t,s)* = E^r(T−s, T−t)`.
pub fn adjoint_propagate(
    form: &TimeForm,
    proj: Option<&Projection>,
    grid: &TimeGrid,
    x: &DVector<f64>,
    t: usize,
    s: usize,
    scheme: Scheme,
) -> Result<DVector<f64>> {
    if s >= t {
        return Err(Error::InvalidParameter(format!("adjoint needs s < t, got s = {s}, t = {t}")));
    }
    if t > grid.n_steps() {
        return Err(Error::InvalidParameter(format!("node {t} beyond the grid")));
    }
    form.space().check_dim(x)?;
    let reversed = effective_form(form, proj)?.reversed();
    let prop = Propagator::build(&reversed, grid, scheme)?;
    let n = grid.n_steps();
    Ok(prop.apply(n - s, n - t, x))
}

/// H-adjoint `G_H⁻¹ Mᵀ G_H` of a coordinate matrix.
pub fn h_adjoint(space: &GalerkinSpace, m: &DMatrix<f64>) -> DMatrix<f64> {
    space.gram_h_inv() * m.transpose() * space.gram_h()
}

/// Largest `‖(I−P)u(t)‖_H` along the projected homogeneous solution from
/// `x ∈ range(P)`.
pub fn subspace_invariance_residual(form: &TimeForm, proj: &Projection, grid: &TimeGrid, x: &DVector<f64>) -> Result<f64> {
    let space = form.space();
    space.check_dim(x)?;
    if space.h_norm(&proj.complement(x)) > 1e-12 * space.h_norm(x).max(1.0) {
        return Err(Error::InvalidParameter("initial value is not in range(P)".into()));
    }
    let traj = propagate(form, Some(proj), grid, x, Scheme::Cayley)?;
    Ok(traj
        .values
        .iter()
        .map(|u| space.h_norm(&proj.complement(u)))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub m: usize,
    pub sup_error: f64,
}

/// Sup-in-time H-errors of `E_m(t,0)P_m x` against the `m_ref` propagator.
pub fn projected_convergence_study(
    form: &TimeForm,
    grid: &TimeGrid,
    x: &DVector<f64>,
    m_list: &[usize],
    m_ref: usize,
) -> Result<Vec<ConvergencePoint>> {
    let space = form.space();
    space.check_dim(x)?;
    if m_ref > space.n_modes() {
        return Err(Error::InvalidParameter(format!("m_ref {m_ref} exceeds n_modes {}", space.n_modes())));
    }
    if m_list.is_empty() || m_list.iter().any(|&m| m == 0 || m >= m_ref) {
        return Err(Error::InvalidParameter("every m must satisfy 1 <= m < m_ref".into()));
    }
    let reference = if m_ref == space.n_modes() {
        propagate(form, None, grid, x, Scheme::Cayley)?
    } else {
        let p = crate::galerkin::project(space, m_ref)?;
        propagate(form, Some(&p), grid, &p.apply(x), Scheme::Cayley)?
    };
    m_list
        .par_iter()
        .map(|&m| {
            let p = crate::galerkin::project(space, m)?;
            let traj = propagate(form, Some(&p), grid, &p.apply(x), Scheme::Cayley)?;
            Ok(ConvergencePoint {
                m,
                sup_error: sup_h_distance(space, &traj.values, &reference.values),
            })
        })
        .collect()
}

/// `(‖u‖_{H¹(H)} + ‖u‖_{L²(V)} + ‖Au‖_{L²(H)}) / (‖f‖_{L²(H)} + ‖x‖_V)`.
pub fn regularity_ratio(traj: &Trajectory, f_l2: f64, x_vnorm: f64) -> Result<f64> {
    let denom = f_l2 + x_vnorm;
    if !(denom > 0.0) {
        return Err(Error::InvalidParameter("regularity ratio needs nonzero data".into()));
    }
    Ok(traj.regularity_norm() / denom)
}
