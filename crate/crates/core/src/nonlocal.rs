//! Nonlocal initial conditions `u(0) = g(u)`, the homotopy `S(λ, w)` and the
//! continuation solver for its fixed point at `λ = 1`.
//!
//! The existence argument behind the problem class is non-constructive. The
//! solver walks `λ` from 0 to 1 and at each step runs a damped Picard
//! iteration (optionally Anderson-accelerated) on `w ↦ S(λ, w)`, warm
//! started from the previous `λ`. Nothing guarantees that this iteration
//! converges on every admissible instance; stalls and boundary hits are
//! reported as errors rather than masked.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{duhamel_values, l2_h_norm, Propagator, Scheme, TimeGrid, Trajectory};
use crate::galerkin::{GalerkinSpace, Projection, TimeForm};
use crate::models::MollifierKernel;
use crate::nonlinearity::{growth_b_l2, scan_transversality, superpose, Nonlinearity, TransversalityReport};
use crate::sampling;

/// `g` acting on a node-sampled path.
pub type ConditionFn = dyn Fn(&TimeGrid, &[DVector<f64>]) -> DVector<f64> + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Constant,
    Multipoint,
    MollifiedIntegral,
    /// Time average `c·(1/T)∫₀ᵀ u dt`.
    Average,
    Custom,
}

#[derive(Clone)]
pub struct NonlocalCondition {
    eval: Arc<ConditionFn>,
    kind: ConditionKind,
    /// Parameters describing the condition's bounds (e.g. `theta`).
    pub bound_params: BTreeMap<String, f64>,
    solver_admissible: bool,
}

impl fmt::Debug for NonlocalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlocalCondition")
            .field("kind", &self.kind)
            .field("bound_params", &self.bound_params)
            .field("solver_admissible", &self.solver_admissible)
            .finish()
    }
}

impl NonlocalCondition {
    pub fn new(kind: ConditionKind, eval: Arc<ConditionFn>) -> Self {
        Self {
            eval,
            kind,
            bound_params: BTreeMap::new(),
            solver_admissible: true,
        }
    }

    pub fn eval(&self, grid: &TimeGrid, values: &[DVector<f64>]) -> DVector<f64> {
        (self.eval)(grid, values)
    }

    pub fn eval_trajectory(&self, traj: &Trajectory) -> DVector<f64> {
        self.eval(&traj.grid, &traj.values)
    }

    pub fn kind(&self) -> ConditionKind {
        self.kind
    }

    /// False for mollified conditions whose V-bound factor is not below one.
    pub fn solver_admissible(&self) -> bool {
        self.solver_admissible
    }

    /// Time average `c·(1/T)∫₀ᵀ u dt` (trapezoid rule).
    pub fn average(c: f64) -> Self {
        let mut g = Self::new(
            ConditionKind::Average,
            Arc::new(move |grid: &TimeGrid, values: &[DVector<f64>]| {
                let w = grid.trapezoid_weights();
                let mut acc = DVector::zeros(values[0].len());
                for (wj, v) in w.iter().zip(values) {
                    acc += v * *wj;
                }
                acc * (c / grid.horizon())
            }),
        );
        g.bound_params.insert("c".into(), c);
        g
    }

    /// `Σ_i c_i u(t_i)` with `u` interpolated linearly between nodes.
    pub fn multipoint(points: Vec<(f64, f64)>) -> Self {
        let total: f64 = points.iter().map(|p| p.1.abs()).sum();
        let mut g = Self::new(
            ConditionKind::Multipoint,
            Arc::new(move |grid: &TimeGrid, values: &[DVector<f64>]| {
                let mut acc = DVector::zeros(values[0].len());
                for &(t, c) in &points {
                    acc += interpolate(grid, values, t) * c;
                }
                acc
            }),
        );
        g.bound_params.insert("coefficient_mass".into(), total);
        g
    }
}

fn interpolate(grid: &TimeGrid, values: &[DVector<f64>], t: f64) -> DVector<f64> {
    let n = grid.n_steps();
    let x = (t / grid.dt()).clamp(0.0, n as f64);
    let j = (x.floor() as usize).min(n - 1);
    let theta = x - j as f64;
    &values[j] * (1.0 - theta) + &values[j + 1] * theta
}

/// Classical initial condition `g(u) = x0`.
pub fn g_constant(x0: DVector<f64>) -> Result<NonlocalCondition> {
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("constant initial value".into()));
    }
    let norm = x0.norm();
    let mut g = NonlocalCondition::new(ConditionKind::Constant, Arc::new(move |_, _| x0.clone()));
    g.bound_params.insert("coordinate_norm".into(), norm);
    Ok(g)
}

/// `g(u) = Σ_i ∫_{s_i}^{t_i} (ρ ⊛ u)(t) dt`, with the convolution realized
/// as the kernel's coordinate matrix `C` and the time integral computed
/// exactly on the piecewise-linear interpolant of the path.
///
/// The recorded bound factor is `theta = |I|·‖C‖²_{H→V}`, so that
/// `‖g(u)‖²_V ≤ theta·∫₀ᵀ ‖u(t)‖²_H dt`. Conditions with `theta ≥ 1` are
/// flagged as inadmissible for the solver.
pub fn g_mollified_integral(
    kernel: &MollifierKernel,
    intervals: &[(f64, f64)],
    space: &GalerkinSpace,
    horizon: f64,
) -> Result<NonlocalCondition> {
    let mut sorted = intervals.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    for &(s, t) in &sorted {
        if !(s >= 0.0 && t <= horizon * (1.0 + 1e-12) && s < t) {
            return Err(Error::InvalidParameter(format!("interval [{s}, {t}] is not inside [0, {horizon}]")));
        }
    }
    if sorted.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(Error::InvalidParameter("integration intervals overlap".into()));
    }
    let measure: f64 = sorted.iter().map(|(s, t)| t - s).sum();
    let conv = kernel.convolution_matrix(space)?;
    let h_to_v = space.h_to_v_operator_norm(&conv);
    let h_norm = space.h_operator_norm(&conv);
    let theta = measure * h_to_v * h_to_v;

    let matrix = conv.clone();
    let eval: Arc<ConditionFn> = Arc::new(move |grid: &TimeGrid, values: &[DVector<f64>]| {
        let mut acc = DVector::zeros(values[0].len());
        for &(s, t) in &sorted {
            acc += integrate_piecewise_linear(grid, values, s, t);
        }
        &matrix * acc
    });
    let mut g = NonlocalCondition::new(ConditionKind::MollifiedIntegral, eval);
    g.bound_params.insert("theta".into(), theta);
    g.bound_params.insert("measure".into(), measure);
    g.bound_params.insert("kernel_derivative_mass".into(), kernel.derivative_mass());
    g.bound_params.insert("convolution_h_norm".into(), h_norm);
    g.solver_admissible = theta < 1.0 && kernel.derivative_mass() < 1.0;
    Ok(g)
}

/// Exact integral over `[a, b]` of the piecewise-linear interpolant.
fn integrate_piecewise_linear(grid: &TimeGrid, values: &[DVector<f64>], a: f64, b: f64) -> DVector<f64> {
    let mut acc = DVector::zeros(values[0].len());
    if b <= a {
        return acc;
    }
    let dt = grid.dt();
    let first = ((a / dt).floor() as usize).min(grid.n_steps() - 1);
    for j in first..grid.n_steps() {
        let (l, r) = (grid.node(j), grid.node(j + 1));
        let lo = l.max(a);
        let hi = r.min(b);
        if hi <= lo {
            if l >= b {
                break;
            }
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let theta = (mid - l) / (r - l);
        acc += (&values[j] * (1.0 - theta) + &values[j + 1] * theta) * (hi - lo);
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GBoundAudit {
    pub r: f64,
    pub margin: f64,
    pub max_g_h: f64,
    pub max_g_v: f64,
    pub pass: bool,
    pub samples: usize,
    pub seed: u64,
}

/// Samples paths with `‖u‖_{L²(H)} = r√T` and checks `‖g(u)‖_H < r`.
/// The first sample is always a constant-in-time path.
pub fn audit_g_bound(g: &NonlocalCondition, space: &GalerkinSpace, grid: &TimeGrid, r: f64, n_samples: usize, seed: u64) -> GBoundAudit {
    let mut rng = sampling::rng(seed);
    let target = r * grid.horizon().sqrt();
    let mut max_h = 0.0_f64;
    let mut max_v = 0.0_f64;
    for i in 0..n_samples.max(1) {
        let path = sampling::random_path(space, grid, i, target, &mut rng);
        let gu = g.eval(grid, &path);
        max_h = max_h.max(space.h_norm(&gu));
        max_v = max_v.max(space.v_norm(&gu));
    }
    let margin = r - max_h;
    GBoundAudit {
        r,
        margin,
        max_g_h: max_h,
        max_g_v: max_v,
        pass: margin > 0.0 && max_v.is_finite(),
        samples: n_samples.max(1),
        seed,
    }
}

/// Sampled `sup{‖g(u)‖_V : ‖u‖_{L²(H)} ≤ radius}`.
pub fn estimate_g_star(g: &NonlocalCondition, space: &GalerkinSpace, grid: &TimeGrid, radius: f64, n_samples: usize, seed: u64) -> f64 {
    let mut rng = sampling::rng(seed);
    let mut best = space.v_norm(&g.eval(grid, &vec![DVector::zeros(space.n_modes()); grid.n_nodes()]));
    for i in 0..n_samples {
        let scale = if i % 2 == 0 { 1.0 } else { rng.random::<f64>().sqrt() };
        let path = sampling::random_path(space, grid, i, radius * scale, &mut rng);
        best = best.max(space.v_norm(&g.eval(grid, &path)));
    }
    best
}

/// `u′ + A(t)u = f(t, u)`, `u(0) = g(u)` on a Galerkin space, with the
/// annulus `(r0, R0)` from the transversality condition.
#[derive(Debug, Clone)]
pub struct NonlocalProblem {
    form: TimeForm,
    proj: Projection,
    f: Nonlinearity,
    g: NonlocalCondition,
    grid: TimeGrid,
    r0: f64,
    r_outer: f64,
    shift_mu: f64,
    shift_delta: f64,
}

impl NonlocalProblem {
    /// `r_outer = f64::INFINITY` stands for `R0 = +∞`.
    pub fn new(
        form: TimeForm,
        proj: Projection,
        f: Nonlinearity,
        g: NonlocalCondition,
        grid: TimeGrid,
        r0: f64,
        r_outer: f64,
    ) -> Result<Self> {
        if !form.space().same_as(proj.space()) {
            return Err(Error::SpaceMismatch);
        }
        if (form.horizon() - grid.horizon()).abs() > 1e-12 * form.horizon() {
            return Err(Error::InvalidParameter("grid and form horizons differ".into()));
        }
        if !(r0 > 0.0 && r_outer > r0) {
            return Err(Error::InvalidParameter(format!("need 0 < r0 < R0, got {r0}, {r_outer}")));
        }
        Ok(Self {
            form,
            proj,
            f,
            g,
            grid,
            r0,
            r_outer,
            shift_mu: 0.0,
            shift_delta: 0.0,
        })
    }

    pub fn form(&self) -> &TimeForm {
        &self.form
    }

    pub fn projection(&self) -> &Projection {
        &self.proj
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.f
    }

    pub fn condition(&self) -> &NonlocalCondition {
        &self.g
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn space(&self) -> &Arc<GalerkinSpace> {
        self.form.space()
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn r_outer(&self) -> f64 {
        self.r_outer
    }

    /// Accumulated exponential shift `μ`; zero for unshifted problems.
    pub fn shift_mu(&self) -> f64 {
        self.shift_mu
    }

    pub fn shift_delta(&self) -> f64 {
        self.shift_delta
    }

    pub fn with_annulus(mut self, r0: f64, r_outer: f64) -> Result<Self> {
        if !(r0 > 0.0 && r_outer > r0) {
            return Err(Error::InvalidParameter(format!("need 0 < r0 < R0, got {r0}, {r_outer}")));
        }
        self.r0 = r0;
        self.r_outer = r_outer;
        Ok(self)
    }

    pub fn with_grid(mut self, grid: TimeGrid) -> Result<Self> {
        if (self.form.horizon() - grid.horizon()).abs() > 1e-12 * self.form.horizon() {
            return Err(Error::InvalidParameter("grid and form horizons differ".into()));
        }
        self.grid = grid;
        Ok(self)
    }

    pub fn with_condition(mut self, g: NonlocalCondition) -> Self {
        self.g = g;
        self
    }

    pub fn with_nonlinearity(mut self, f: Nonlinearity) -> Self {
        self.f = f;
        self
    }

    /// The projected form `a_m` that generates the Galerkin dynamics.
    pub fn effective_form(&self) -> Result<TimeForm> {
        self.form.projected(&self.proj)
    }

    /// Maps a solution of this (possibly shifted) problem back to the
    /// original unknown, `u(t) = e^{μt} v(t)`.
    pub fn unshift(&self, traj: &Trajectory) -> Result<Trajectory> {
        let base = self.effective_form()?.shifted(-self.shift_delta);
        let values = traj
            .values
            .iter()
            .zip(traj.grid.nodes())
            .map(|(v, t)| v * (self.shift_mu * t).exp())
            .collect();
        Trajectory::new(&base, traj.grid, values)
    }

    /// Runs the transversality scan and the g-bound audit on radii inside
    /// the annulus.
    pub fn audit(&self, n_samples: usize, seed: u64) -> Result<ProblemAudit> {
        let space = self.space();
        let stride = (self.grid.n_steps() / 16).max(1);
        let t_grid: Vec<f64> = (0..=self.grid.n_steps()).step_by(stride).map(|j| self.grid.node(j)).collect();
        let transversality = scan_transversality(&self.f, space, self.r0, self.r_outer, n_samples.max(100), &t_grid, seed)?;
        let hi = if self.r_outer.is_finite() { self.r_outer } else { 10.0 * self.r0 };
        let g_bounds: Vec<GBoundAudit> = (1..=5)
            .map(|k| {
                let r = self.r0 * (hi / self.r0).powf(k as f64 / 6.0);
                audit_g_bound(&self.g, space, &self.grid, r, (n_samples / 5).max(8), seed.wrapping_add(k))
            })
            .collect();
        let pass = transversality.pass() && g_bounds.iter().all(|a| a.pass) && self.g.solver_admissible();
        Ok(ProblemAudit {
            transversality,
            g_bounds,
            condition_admissible: self.g.solver_admissible(),
            pass,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemAudit {
    pub transversality: TransversalityReport,
    pub g_bounds: Vec<GBoundAudit>,
    pub condition_admissible: bool,
    pub pass: bool,
}

/// `S(λ, w) = λE_m(t,0)P g(w) + λ∫₀ᵗ E_m(t,s) P N_f(w)(s) ds`.
pub fn homotopy_map(prob: &NonlocalProblem, lambda: f64, w: &Trajectory) -> Result<Trajectory> {
    if w.grid != prob.grid {
        return Err(Error::InvalidParameter("path is not on the problem grid".into()));
    }
    let eff = prob.effective_form()?;
    let prop = Propagator::build(&eff, &prob.grid, Scheme::Cayley)?;
    let values = homotopy_values(prob, &prop, lambda, &w.values)?;
    Trajectory::new(&eff, prob.grid, values)
}

fn homotopy_values(prob: &NonlocalProblem, prop: &Propagator, lambda: f64, w: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let p = prob.proj.matrix();
    let x0 = p * prob.g.eval(&prob.grid, w) * lambda;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("nonlocal condition value".into()));
    }
    let sources: Vec<DVector<f64>> = superpose(&prob.f, prob.grid.nodes(), w)?
        .into_iter()
        .map(|v| p * v * lambda)
        .collect();
    Ok(duhamel_values(prop, &x0, &sources))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda_steps: usize,
    pub inner_tol: f64,
    pub damping: f64,
    pub max_inner: usize,
    /// Anderson (multisecant) history depth; 0 disables acceleration.
    pub acceleration_depth: usize,
    pub g_star_samples: usize,
    pub regularity_probes: usize,
    pub scheme: Scheme,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda_steps: 10,
            inner_tol: 1e-8,
            damping: 0.5,
            max_inner: 500,
            acceleration_depth: 0,
            g_star_samples: 200,
            regularity_probes: 8,
            scheme: Scheme::Cayley,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_steps == 0 {
            return Err(Error::InvalidParameter("lambda_steps must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter(format!("damping {} outside (0, 1]", self.damping)));
        }
        if !(self.inner_tol > 0.0) || self.max_inner == 0 {
            return Err(Error::InvalidParameter("inner tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaStep {
    pub lambda: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub solution: Trajectory,
    /// `‖u(0) − P g(u)‖_H`.
    pub fixed_point_residual: f64,
    /// `‖u − S(1, u)‖_{L²(H)}`.
    pub map_residual: f64,
    pub lambda_path: Vec<LambdaStep>,
    /// `‖u‖_{H¹(H)} + ‖u‖_{L²(V)} + ‖Au‖_{L²(H)}`.
    pub apriori_lhs: f64,
    /// `2·max{a·r0·√T, ‖b‖_{L²}} + g*`.
    pub apriori_rhs: f64,
    pub g_star: f64,
    /// Sampled maximal-regularity constant of the form on this grid.
    pub regularity_constant: f64,
    pub converged: bool,
}

impl SolveReport {
    pub fn apriori_ratio(&self) -> f64 {
        self.apriori_lhs / self.apriori_rhs
    }
}

/// λ-continuation with damped (optionally accelerated) Picard iteration.
pub fn solve_nonlocal(prob: &NonlocalProblem, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    if !prob.g.solver_admissible() {
        return Err(Error::AuditFailed("nonlocal condition is flagged inadmissible for the solver".into()));
    }
    let space = prob.space().clone();
    let grid = prob.grid;
    let eff = prob.effective_form()?;
    let prop = Propagator::build(&eff, &grid, cfg.scheme)?;
    let sqrt_t = grid.horizon().sqrt();
    let n = space.n_modes();

    let mut w: Vec<DVector<f64>> = vec![DVector::zeros(n); grid.n_nodes()];
    let mut path = Vec::with_capacity(cfg.lambda_steps);
    for k in 1..=cfg.lambda_steps {
        let lambda = k as f64 / cfg.lambda_steps as f64;
        let last = k == cfg.lambda_steps;
        let mut accel = Anderson::new(cfg.acceleration_depth, &grid);
        let mut done = None;
        let mut residual = f64::INFINITY;
        for it in 0..cfg.max_inner {
            let s = homotopy_values(prob, &prop, lambda, &w)?;
            let r: Vec<DVector<f64>> = s.iter().zip(&w).map(|(a, b)| a - b).collect();
            residual = l2_h_norm(&space, &grid, &r);
            if !residual.is_finite() {
                return Err(Error::NonFinite(format!("iterate at lambda = {lambda}")));
            }
            let fixed_ok = !last || space.h_norm(&r[0]) <= cfg.inner_tol;
            if residual <= cfg.inner_tol && fixed_ok {
                done = Some(it);
                break;
            }
            let next = accel.next(&w, &r, cfg.damping);
            let radius = l2_h_norm(&space, &grid, &next) / sqrt_t;
            if radius.is_nan() || next.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
                return Err(Error::NonFinite(format!("iterate at lambda = {lambda}")));
            }
            if radius >= prob.r_outer {
                return Err(Error::BoundaryHit {
                    lambda,
                    radius,
                    outer: prob.r_outer,
                });
            }
            w = next;
        }
        match done {
            Some(iterations) => path.push(LambdaStep {
                lambda,
                iterations,
                residual,
            }),
            None => return Err(Error::MaxIterations { lambda, residual }),
        }
    }

    let s = homotopy_values(prob, &prop, 1.0, &w)?;
    let map_residual = l2_h_norm(&space, &grid, &s.iter().zip(&w).map(|(a, b)| a - b).collect::<Vec<_>>());
    let solution = Trajectory::new(&eff, grid, w)?;
    let pg = prob.proj.apply(&prob.g.eval_trajectory(&solution));
    let fixed_point_residual = space.h_norm(&(solution.initial() - pg));

    let g_star = estimate_g_star(&prob.g, &space, &grid, prob.r0 * sqrt_t, cfg.g_star_samples, cfg.seed);
    let b_l2 = growth_b_l2(&prob.f, &grid);
    let apriori_rhs = 2.0 * (prob.f.growth_a() * prob.r0 * sqrt_t).max(b_l2) + g_star;
    let regularity_constant = regularity_constant(&eff, &grid, cfg.regularity_probes, cfg.seed)?;
    Ok(SolveReport {
        apriori_lhs: solution.regularity_norm(),
        apriori_rhs,
        g_star,
        regularity_constant,
        converged: map_residual <= cfg.inner_tol && fixed_point_residual <= cfg.inner_tol,
        fixed_point_residual,
        map_residual,
        lambda_path: path,
        solution,
    })
}

/// Largest sampled ratio `(‖u‖_{H¹(H)} + ‖u‖_{L²(V)} + ‖Au‖_{L²(H)}) /
/// (‖f‖_{L²(H)} + ‖x‖_V)` over random linear probe problems.
pub fn regularity_constant(form: &TimeForm, grid: &TimeGrid, n_probes: usize, seed: u64) -> Result<f64> {
    let space = form.space();
    let prop = Propagator::build(form, grid, Scheme::Cayley)?;
    let mut rng = sampling::rng(seed);
    let mut best = 0.0_f64;
    for i in 0..n_probes {
        let x = {
            let d = sampling::gaussian_vector(space.n_modes(), &mut rng);
            let vn = space.v_norm(&d);
            if i % 3 == 1 { d * 0.0 } else { d / vn }
        };
        let f = if i % 3 == 0 {
            vec![DVector::zeros(space.n_modes()); grid.n_nodes()]
        } else {
            sampling::random_path(space, grid, i, 1.0, &mut rng)
        };
        let traj = Trajectory::new(form, *grid, duhamel_values(&prop, &x, &f))?;
        let denom = l2_h_norm(space, grid, &f) + space.v_norm(&x);
        best = best.max(traj.regularity_norm() / denom);
    }
    Ok(best)
}

/// Anderson mixing on the L²(H)-weighted flattened residuals.
struct Anderson {
    depth: usize,
    weights: Vec<f64>,
    prev: Option<(Vec<f64>, Vec<f64>)>,
    dw: Vec<Vec<f64>>,
    dr: Vec<Vec<f64>>,
}

impl Anderson {
    fn new(depth: usize, grid: &TimeGrid) -> Self {
        Self {
            depth,
            weights: grid.trapezoid_weights().iter().map(|w| w.sqrt()).collect(),
            prev: None,
            dw: Vec::new(),
            dr: Vec::new(),
        }
    }

    fn flatten(&self, v: &[DVector<f64>]) -> Vec<f64> {
        v.iter()
            .zip(&self.weights)
            .flat_map(|(x, w)| x.iter().map(move |c| c * w))
            .collect()
    }

    fn unflatten(&self, flat: &[f64], n: usize) -> Vec<DVector<f64>> {
        flat.chunks(n)
            .zip(&self.weights)
            .map(|(c, w)| DVector::from_iterator(n, c.iter().map(|v| v / w)))
            .collect()
    }

    fn next(&mut self, w: &[DVector<f64>], r: &[DVector<f64>], beta: f64) -> Vec<DVector<f64>> {
        let damped = || w.iter().zip(r).map(|(x, d)| x + d * beta).collect::<Vec<_>>();
        if self.depth == 0 {
            return damped();
        }
        let n = w[0].len();
        let wf = self.flatten(w);
        let rf = self.flatten(r);
        if let Some((pw, pr)) = self.prev.take() {
            self.dw.push(wf.iter().zip(&pw).map(|(a, b)| a - b).collect());
            self.dr.push(rf.iter().zip(&pr).map(|(a, b)| a - b).collect());
            if self.dw.len() > self.depth {
                self.dw.remove(0);
                self.dr.remove(0);
            }
        }
        self.prev = Some((wf.clone(), rf.clone()));
        if self.dr.is_empty() {
            return damped();
        }
        let cols = self.dr.len();
        let mat = DMatrix::from_fn(rf.len(), cols, |i, j| self.dr[j][i]);
        let rhs = DVector::from_column_slice(&rf);
        let gamma = match mat.svd(true, true).solve(&rhs, 1e-12) {
            Ok(g) if g.iter().all(|v| v.is_finite()) => g,
            _ => return damped(),
        };
        let mut out: Vec<f64> = wf.iter().zip(&rf).map(|(x, d)| x + beta * d).collect();
        for (j, gj) in gamma.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                *o -= gj * (self.dw[j][i] + beta * self.dr[j][i]);
            }
        }
        self.unflatten(&out, n)
    }
}

/// Exponential shift `v(t) = e^{−μt}u(t)`.
///
/// With `δ = min(shift_delta, μ)` and `ε = μ − δ` the transformed problem
/// has stiffness `S(t) + δ·G_H`, nonlinearity
/// `f̂(t,x) = e^{−μt} f(t, e^{μt}x) − εx` and condition `ĝ(v) = g(e^{μ·}v)`.
/// [`NonlocalProblem::unshift`] inverts the substitution on solutions.
pub fn exp_shift(prob: &NonlocalProblem, mu: f64) -> Result<NonlocalProblem> {
    if !(mu >= 0.0) {
        return Err(Error::InvalidParameter(format!("shift mu must be nonnegative, got {mu}")));
    }
    if mu == 0.0 {
        return Ok(prob.clone());
    }
    let delta = prob.form.constants().shift_delta.min(mu);
    let eps = mu - delta;
    let form = if delta > 0.0 { prob.form.shifted(delta) } else { prob.form.clone() };

    let f_eval = prob.f.eval_handle();
    let f_b = prob.f.growth_b_handle();
    let f_hat = Nonlinearity::new(
        format!("shift({},{mu})", prob.f.label()),
        Arc::new(move |t, x: &DVector<f64>| {
            let grow = (mu * t).exp();
            f_eval(t, &(x * grow)) / grow - x * eps
        }),
        prob.f.growth_a() + eps,
        Arc::new(move |t| (-mu * t).exp() * f_b(t)),
    );

    let g_inner = prob.g.clone();
    let mut g_hat = NonlocalCondition::new(
        prob.g.kind(),
        Arc::new(move |grid: &TimeGrid, values: &[DVector<f64>]| {
            let scaled: Vec<DVector<f64>> = values
                .iter()
                .zip(grid.nodes())
                .map(|(v, t)| v * (mu * t).exp())
                .collect();
            g_inner.eval(grid, &scaled)
        }),
    );
    g_hat.bound_params = prob.g.bound_params.clone();
    g_hat.bound_params.insert("shift_growth".into(), (mu * prob.grid.horizon()).exp());
    g_hat.solver_admissible = prob.g.solver_admissible;

    Ok(NonlocalProblem {
        form,
        proj: prob.proj.clone(),
        f: f_hat,
        g: g_hat,
        grid: prob.grid,
        r0: prob.r0,
        r_outer: prob.r_outer,
        shift_mu: prob.shift_mu + mu,
        shift_delta: prob.shift_delta + delta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnulusReport {
    pub pass: bool,
    pub violations: usize,
    /// Largest `‖u(t2)‖ − ‖u(t1)‖` over admissible pairs.
    pub worst_increase: f64,
    /// Nodes with `‖u(t)‖_H ∈ (r0, R0)`.
    pub nodes_in_annulus: usize,
}

/// Checks that `‖u(t)‖_H` does not grow by more than `tol_energy` across any
/// pair `t1 < t2` whose connecting nodes all lie in the open annulus.
pub fn annulus_energy_check(traj: &Trajectory, r0: f64, r_outer: f64, tol_energy: f64) -> AnnulusReport {
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut inside = 0;
    let mut run_min: Option<f64> = None;
    for &h in &traj.h_norms {
        if h > r0 && h < r_outer {
            inside += 1;
            if let Some(m) = run_min {
                let inc = h - m;
                worst = worst.max(inc);
                if inc > tol_energy {
                    violations += 1;
                }
                run_min = Some(m.min(h));
            } else {
                run_min = Some(h);
            }
        } else {
            run_min = None;
        }
    }
    AnnulusReport {
        pass: violations == 0,
        violations,
        worst_increase: if worst.is_finite() { worst } else { 0.0 },
        nodes_in_annulus: inside,
    }
}
