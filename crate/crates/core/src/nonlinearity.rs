//! Superposition operators, growth and transversality audits, and convex
//! functionals whose negative gradients drive the gradient-flow problems.
//!
//! Weak and strong convergence coincide in finite dimensions, so
//! demicontinuity of a nonlinearity reduces to ordinary continuity; the
//! audits here check the growth bound and sample continuity only.
//!
//! All sampling is driven by a seeded generator and every report records its
//! seed. The transversality scan is a falsifier: a passing report means no
//! violation was found among the samples, not that none exists.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{l2_h_norm, Trajectory};
use crate::galerkin::{GalerkinSpace, TimeForm};
use crate::sampling;

pub type NonlinearFn = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync;
pub type GrowthFn = dyn Fn(f64) -> f64 + Send + Sync;
pub type ValueFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
pub type GradientFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// A nonlinearity `f(t, x)` with declared growth `‖f(t,x)‖_H ≤ a‖x‖_H + b(t)`.
#[derive(Clone)]
pub struct Nonlinearity {
    eval: Arc<NonlinearFn>,
    growth_a: f64,
    growth_b: Arc<GrowthFn>,
    label: String,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("label", &self.label)
            .field("growth_a", &self.growth_a)
            .finish()
    }
}

impl Nonlinearity {
    pub fn new(label: impl Into<String>, eval: Arc<NonlinearFn>, growth_a: f64, growth_b: Arc<GrowthFn>) -> Self {
        Self {
            eval,
            growth_a,
            growth_b,
            label: label.into(),
        }
    }

    pub fn zero() -> Self {
        Self::new("zero", Arc::new(|_, x| DVector::zeros(x.len())), 0.0, Arc::new(|_| 0.0))
    }

    /// `f(t, x) = c·x`.
    pub fn linear(c: f64) -> Self {
        Self::new(format!("linear({c})"), Arc::new(move |_, x| x * c), c.abs(), Arc::new(|_| 0.0))
    }

    /// `f(t, x) = h(t)` independent of the state; `bound` is `sup ‖h(t)‖_H`.
    pub fn source<H>(label: impl Into<String>, h: H, bound: f64) -> Self
    where
        H: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        Self::new(label, Arc::new(move |t, _| h(t)), 0.0, Arc::new(move |_| bound))
    }

    /// `f(t, x) = −x/(1 + ‖x‖_H) + sin(t)·e₁` with `a = 1`, `b ≡ 1`.
    pub fn saturating_damping(space: Arc<GalerkinSpace>) -> Self {
        let eval: Arc<NonlinearFn> = Arc::new(move |t, x| {
            let mut out = x / -(1.0 + space.h_norm(x));
            out[0] += t.sin() / space.gram_h()[(0, 0)].sqrt();
            out
        });
        Self::new("saturating_damping", eval, 1.0, Arc::new(|_| 1.0))
    }

    /// `f(t, x) = −∇φ(x)` with the growth constants declared by `phi`.
    pub fn negative_gradient(phi: &ConvexFunctional) -> Self {
        let grad = phi.gradient.clone();
        let b = phi.growth_b;
        Self::new(
            format!("-grad({})", phi.label),
            Arc::new(move |_, x| -grad(x)),
            phi.growth_a,
            Arc::new(move |_| b),
        )
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.eval)(t, x)
    }

    pub fn growth_a(&self) -> f64 {
        self.growth_a
    }

    pub fn growth_b(&self, t: f64) -> f64 {
        (self.growth_b)(t)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub(crate) fn eval_handle(&self) -> Arc<NonlinearFn> {
        self.eval.clone()
    }

    pub(crate) fn growth_b_handle(&self) -> Arc<GrowthFn> {
        self.growth_b.clone()
    }
}

/// `N_f(u)(t_j) = f(t_j, u(t_j))` on the grid nodes.
pub fn apply_superposition(f: &Nonlinearity, traj: &Trajectory) -> Result<Vec<DVector<f64>>> {
    superpose(f, traj.grid.nodes(), &traj.values)
}

pub(crate) fn superpose(f: &Nonlinearity, nodes: impl Iterator<Item = f64>, values: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    nodes
        .zip(values)
        .map(|(t, u)| {
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("trajectory value at t = {t}")));
            }
            let out = f.eval(t, u);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("nonlinearity '{}' at t = {t}", f.label)));
            }
            Ok(out)
        })
        .collect()
}

/// `a·‖u‖_{L²(H)} + ‖b‖_{L²}`, the bound on `‖N_f(u)‖_{L²(H)}`.
pub fn superposition_bound(f: &Nonlinearity, space: &GalerkinSpace, traj: &Trajectory) -> f64 {
    f.growth_a * l2_h_norm(space, &traj.grid, &traj.values) + growth_b_l2(f, &traj.grid)
}

/// `‖b‖_{L²(0,T)}` by the trapezoid rule on `grid`.
pub fn growth_b_l2(f: &Nonlinearity, grid: &crate::evolution::TimeGrid) -> f64 {
    grid.trapezoid_weights()
        .iter()
        .zip(grid.nodes())
        .map(|(w, t)| w * f.growth_b(t).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthAudit {
    pub label: String,
    pub samples: usize,
    /// Largest `‖f(t,x)‖ − a‖x‖ − b(t)` observed.
    pub worst_excess: f64,
    pub pass: bool,
    pub seed: u64,
}

/// Samples `(t, x)` with `t ∈ [0, T]` and `‖x‖_H` log-uniform up to
/// `max_norm`, checking `‖f(t,x)‖ ≤ a‖x‖ + b(t) + 1e-10`.
pub fn growth_audit(f: &Nonlinearity, space: &GalerkinSpace, horizon: f64, n_samples: usize, max_norm: f64, seed: u64) -> GrowthAudit {
    let mut rng = sampling::rng(seed);
    let points: Vec<(f64, DVector<f64>)> = (0..n_samples)
        .map(|_| {
            let t = sampling::uniform(&mut rng, 0.0, horizon);
            let r = (rng.random::<f64>() * (max_norm.ln() - (1e-3f64).ln()) + (1e-3f64).ln()).exp();
            (t, sampling::unit_h_direction(space, &mut rng) * r)
        })
        .collect();
    let worst_excess = points
        .par_iter()
        .map(|(t, x)| space.h_norm(&f.eval(*t, x)) - f.growth_a * space.h_norm(x) - f.growth_b(*t))
        .reduce(|| f64::NEG_INFINITY, f64::max);
    GrowthAudit {
        label: f.label.clone(),
        samples: n_samples,
        worst_excess,
        pass: worst_excess <= 1e-10,
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransversalityReport {
    pub r0: f64,
    /// Outer radius; `None` stands for `R0 = +∞`.
    pub r_outer: Option<f64>,
    pub violations: usize,
    /// Largest `⟨f(t,x), x⟩_H` observed.
    pub worst_value: f64,
    pub samples: usize,
    pub seed: u64,
}

impl TransversalityReport {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

const TRANSVERSALITY_RADII: usize = 16;

/// Scans `⟨f(t,x), x⟩_H ≤ 0` on spheres with radii log-spaced in
/// `(r0, R0)` (capped at `10·r0` for `R0 = +∞`), at every `t` in `t_grid`.
pub fn scan_transversality(
    f: &Nonlinearity,
    space: &GalerkinSpace,
    r0: f64,
    r_outer: f64,
    n_samples: usize,
    t_grid: &[f64],
    seed: u64,
) -> Result<TransversalityReport> {
    if !(r0 > 0.0 && r_outer > r0) {
        return Err(Error::InvalidParameter(format!("need 0 < r0 < R0, got r0 = {r0}, R0 = {r_outer}")));
    }
    if n_samples < 100 {
        return Err(Error::InvalidParameter("transversality scan needs at least 100 samples".into()));
    }
    if t_grid.is_empty() {
        return Err(Error::InvalidParameter("t_grid must be nonempty".into()));
    }
    let hi = if r_outer.is_finite() { r_outer } else { 10.0 * r0 };
    let lo = r0 * (1.0 + 1e-9);
    let hi = hi * (1.0 - 1e-9);
    let radii: Vec<f64> = (0..TRANSVERSALITY_RADII)
        .map(|i| lo * (hi / lo).powf(i as f64 / (TRANSVERSALITY_RADII - 1) as f64))
        .collect();
    let mut rng = sampling::rng(seed);
    let points: Vec<DVector<f64>> = (0..n_samples)
        .map(|i| sampling::unit_h_direction(space, &mut rng) * radii[i % radii.len()])
        .collect();
    let (violations, worst_value) = points
        .par_iter()
        .map(|x| {
            let mut count = 0usize;
            let mut worst = f64::NEG_INFINITY;
            for &t in t_grid {
                let v = space.h_inner(&f.eval(t, x), x);
                if v > 0.0 {
                    count += 1;
                }
                worst = worst.max(v);
            }
            (count, worst)
        })
        .reduce(|| (0, f64::NEG_INFINITY), |a, b| (a.0 + b.0, a.1.max(b.1)));
    Ok(TransversalityReport {
        r0,
        r_outer: r_outer.is_finite().then_some(r_outer),
        violations,
        worst_value,
        samples: n_samples * t_grid.len(),
        seed,
    })
}

/// Convex, Gateaux differentiable functional with sublinear gradient
/// `‖∇φ(x)‖_H ≤ a‖x‖_H + b`.
#[derive(Clone)]
pub struct ConvexFunctional {
    value: Arc<ValueFn>,
    gradient: Arc<GradientFn>,
    pub lipschitz_grad: Option<f64>,
    pub growth_a: f64,
    pub growth_b: f64,
    label: String,
}

impl fmt::Debug for ConvexFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvexFunctional")
            .field("label", &self.label)
            .field("lipschitz_grad", &self.lipschitz_grad)
            .field("growth_a", &self.growth_a)
            .field("growth_b", &self.growth_b)
            .finish()
    }
}

impl ConvexFunctional {
    pub fn new(
        label: impl Into<String>,
        value: Arc<ValueFn>,
        gradient: Arc<GradientFn>,
        lipschitz_grad: Option<f64>,
        growth: (f64, f64),
    ) -> Self {
        Self {
            value,
            gradient,
            lipschitz_grad,
            growth_a: growth.0,
            growth_b: growth.1,
            label: label.into(),
        }
    }

    /// `φ(x) = ½‖x‖²_H`.
    pub fn half_norm_squared(space: Arc<GalerkinSpace>) -> Self {
        // The H-gradient of ½xᵀG_H x is x itself.
        Self::new(
            "half_norm_squared",
            Arc::new(move |x| 0.5 * space.h_inner(x, x)),
            Arc::new(|x: &DVector<f64>| x.clone()),
            Some(1.0),
            (1.0, 0.0),
        )
    }

    /// `φ(x) = Σ_k √(1 + x_k²)` for an H-orthonormal basis; the gradient is
    /// bounded by `√n` and 1-Lipschitz.
    pub fn pseudo_huber(n_modes: usize) -> Self {
        Self::new(
            "pseudo_huber",
            Arc::new(|x: &DVector<f64>| x.iter().map(|v| (1.0 + v * v).sqrt()).sum()),
            Arc::new(|x: &DVector<f64>| x.map(|v| v / (1.0 + v * v).sqrt())),
            Some(1.0),
            (0.0, (n_modes as f64).sqrt()),
        )
    }

    /// Identically zero functional.
    pub fn zero() -> Self {
        Self::new(
            "zero",
            Arc::new(|_| 0.0),
            Arc::new(|x: &DVector<f64>| DVector::zeros(x.len())),
            Some(0.0),
            (0.0, 0.0),
        )
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    /// Smallest `⟨∇φ(x) − ∇φ(y), x − y⟩_H` over the sampled pairs.
    pub worst_inner: f64,
    /// Largest midpoint convexity defect `φ((x+y)/2) − (φ(x)+φ(y))/2`.
    pub worst_midpoint_gap: f64,
    pub pairs: usize,
    pub pass: bool,
    pub seed: u64,
}

/// Samples Gaussian pairs with scale 3 and checks monotonicity of the
/// gradient together with midpoint convexity.
pub fn check_monotone(phi: &ConvexFunctional, space: &GalerkinSpace, n_pairs: usize, seed: u64) -> Result<MonotoneReport> {
    if n_pairs < 100 {
        return Err(Error::InvalidParameter("monotonicity check needs at least 100 pairs".into()));
    }
    let mut rng = sampling::rng(seed);
    let n = space.n_modes();
    let mut worst_inner = f64::INFINITY;
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..n_pairs {
        let x = sampling::gaussian_vector(n, &mut rng) * 3.0;
        let y = sampling::gaussian_vector(n, &mut rng) * 3.0;
        let d = &x - &y;
        worst_inner = worst_inner.min(space.h_inner(&(phi.gradient(&x) - phi.gradient(&y)), &d));
        let mid = (&x + &y) * 0.5;
        worst_gap = worst_gap.max(phi.value(&mid) - 0.5 * (phi.value(&x) + phi.value(&y)));
    }
    Ok(MonotoneReport {
        worst_inner,
        worst_midpoint_gap: worst_gap,
        pairs: n_pairs,
        pass: worst_inner >= -1e-10 && worst_gap <= 1e-10,
        seed,
    })
}

/// Threshold for [`gradient_consistency`] to count as passing.
pub const GRADIENT_CONSISTENCY_TOL: f64 = 1e-5;

/// Largest `|D_dφ(x) − ⟨∇φ(x), d⟩_H| / (1 + |⟨∇φ(x), d⟩_H|)` with the
/// directional derivative from central differences of step `h`.
pub fn gradient_consistency(phi: &ConvexFunctional, space: &GalerkinSpace, n_points: usize, h: f64, seed: u64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidParameter(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    let mut rng = sampling::rng(seed);
    let n = space.n_modes();
    let mut worst = 0.0_f64;
    for _ in 0..n_points {
        let x = sampling::gaussian_vector(n, &mut rng) * 3.0;
        let d = sampling::unit_h_direction(space, &mut rng);
        let fd = (phi.value(&(&x + &d * h)) - phi.value(&(&x - &d * h))) / (2.0 * h);
        let an = space.h_inner(&phi.gradient(&x), &d);
        worst = worst.max((fd - an).abs() / (1.0 + an.abs()));
    }
    Ok(worst)
}

/// Minimum over interior nodes and sampled test points `v` of
/// `⟨u′ + A u, v − u⟩_H − φ(u) + φ(v)`, with `u′` from central differences.
///
/// Test points are drawn from the unit H-ball around `u(t)`.
pub fn evi_residual(form: &TimeForm, phi: &ConvexFunctional, traj: &Trajectory, n_test: usize, seed: u64) -> Result<f64> {
    let space = form.space();
    let grid = traj.grid;
    if grid.n_steps() < 2 {
        return Err(Error::InvalidParameter("evi residual needs at least two steps".into()));
    }
    let dt = grid.dt();
    let mut rng = sampling::rng(seed);
    let mut worst = f64::INFINITY;
    for j in 1..grid.n_steps() {
        let u = &traj.values[j];
        let du = (&traj.values[j + 1] - &traj.values[j - 1]) / (2.0 * dt);
        // G u′ + S u so that ⟨u′ + Au, w⟩_H = wᵀ(G u′ + S u).
        let lhs = space.gram_h() * &du + form.stiffness_at(grid.node(j))? * u;
        let phi_u = phi.value(u);
        // v = u(t) contributes exactly zero.
        worst = worst.min(0.0);
        for _ in 0..n_test {
            let radius = rng.random::<f64>();
            let v = u + sampling::unit_h_direction(space, &mut rng) * radius;
            let r = lhs.dot(&(&v - u)) - phi_u + phi.value(&v);
            worst = worst.min(r);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{propagate, Scheme, TimeGrid};
    use crate::galerkin::FormConstants;
    use std::f64::consts::PI;

    fn space(n: usize) -> Arc<GalerkinSpace> {
        Arc::new(GalerkinSpace::sine(n, PI).unwrap())
    }

    fn heat_form(space: Arc<GalerkinSpace>) -> TimeForm {
        let gv = space.gram_v().clone();
        TimeForm::new(
            space,
            1.0,
            Arc::new(move |_| gv.clone()),
            FormConstants {
                bound_m: 1.0,
                coercivity_alpha: 1.0,
                shift_delta: 0.0,
            },
            Arc::new(|_| 0.0),
        )
        .unwrap()
    }

    fn sample_traj(n: usize) -> Trajectory {
        let s = space(n);
        let g = TimeGrid::new(1.0, 20).unwrap();
        propagate(&heat_form(s), None, &g, &DVector::from_element(n, 1.0), Scheme::Cayley).unwrap()
    }

    #[test]
    fn superposition_examples() {
        let tr = sample_traj(3);
        let neg = apply_superposition(&Nonlinearity::linear(-1.0), &tr).unwrap();
        for (a, b) in neg.iter().zip(&tr.values) {
            assert_eq!(a, &-b);
        }
        let zero = apply_superposition(&Nonlinearity::zero(), &tr).unwrap();
        assert!(zero.iter().all(|v| v.iter().all(|&c| c == 0.0)));
        let s = space(3);
        let bad = Nonlinearity::new("nan", Arc::new(|_, x| x * f64::NAN), 1.0, Arc::new(|_| 0.0));
        assert!(matches!(apply_superposition(&bad, &tr), Err(Error::NonFinite(_))));
        let sat = Nonlinearity::saturating_damping(s.clone());
        let out = apply_superposition(&sat, &tr).unwrap();
        assert!(l2_h_norm(&s, &tr.grid, &out) <= superposition_bound(&sat, &s, &tr) + 1e-10);
    }

    #[test]
    fn growth_audit_saturating() {
        let s = space(4);
        let a = growth_audit(&Nonlinearity::saturating_damping(s.clone()), &s, 1.0, 1000, 1e3, 7);
        assert!(a.pass, "{a:?}");
        let lying = Nonlinearity::new("lying", Arc::new(|_, x| x * 2.0), 1.0, Arc::new(|_| 0.0));
        assert!(!growth_audit(&lying, &s, 1.0, 1000, 1e3, 7).pass);
    }

    #[test]
    fn transversality_examples() {
        let s = space(3);
        let ts = [0.0, 0.5, 1.0];
        let rep = scan_transversality(&Nonlinearity::linear(-1.0), &s, 0.5, 2.0, 200, &ts, 1).unwrap();
        assert!(rep.pass());
        assert!((rep.worst_value + 0.25).abs() < 1e-8);
        let rep = scan_transversality(&Nonlinearity::linear(1.0), &s, 0.5, f64::INFINITY, 200, &ts, 1).unwrap();
        assert_eq!(rep.violations, rep.samples);
        assert_eq!(rep.r_outer, None);
        // −x + h(t) with ‖h‖ ≤ β passes once r0 > β.
        let beta = 0.8;
        let shifted = Nonlinearity::new(
            "damped_source",
            Arc::new(move |t, x: &DVector<f64>| {
                let mut h = DVector::zeros(x.len());
                h[0] = beta * t.cos();
                h - x
            }),
            1.0,
            Arc::new(move |_| beta),
        );
        assert!(scan_transversality(&shifted, &s, 0.81, 5.0, 500, &ts, 3).unwrap().pass());
        assert!(!scan_transversality(&shifted, &s, 0.1, 0.5, 500, &ts, 3).unwrap().pass());
        assert!(scan_transversality(&shifted, &s, 1.0, 0.5, 500, &ts, 3).is_err());
        assert!(scan_transversality(&shifted, &s, 0.5, 1.0, 50, &ts, 3).is_err());
    }

    #[test]
    fn monotone_examples() {
        let s = space(4);
        let q = check_monotone(&ConvexFunctional::half_norm_squared(s.clone()), &s, 200, 1).unwrap();
        assert!(q.pass && q.worst_inner >= 0.0);
        let h = check_monotone(&ConvexFunctional::pseudo_huber(4), &s, 200, 2).unwrap();
        assert!(h.pass);
        let concave = ConvexFunctional::new(
            "concave",
            Arc::new(|x: &DVector<f64>| -0.5 * x.dot(x)),
            Arc::new(|x: &DVector<f64>| -x),
            Some(1.0),
            (1.0, 0.0),
        );
        assert!(!check_monotone(&concave, &s, 200, 3).unwrap().pass);
        assert!(check_monotone(&concave, &s, 10, 3).is_err());
    }

    #[test]
    fn gradient_consistency_examples() {
        let s = space(4);
        let q = gradient_consistency(&ConvexFunctional::half_norm_squared(s.clone()), &s, 50, 1e-4, 1).unwrap();
        assert!(q <= 1e-9, "{q}");
        let h = gradient_consistency(&ConvexFunctional::pseudo_huber(4), &s, 50, 1e-4, 1).unwrap();
        assert!(h <= GRADIENT_CONSISTENCY_TOL, "{h}");
        let wrong = ConvexFunctional::new(
            "wrong",
            Arc::new(|x: &DVector<f64>| 0.5 * x.dot(x)),
            Arc::new(|x: &DVector<f64>| x * 1.01),
            Some(1.0),
            (1.0, 0.0),
        );
        let w = gradient_consistency(&wrong, &s, 50, 1e-4, 1).unwrap();
        assert!(w > 1e-3 && w < 1.1e-2, "{w}");
        assert!(gradient_consistency(&wrong, &s, 5, 1e-2, 1).is_err());
    }

    #[test]
    fn evi_residual_of_exact_gradient_flow() {
        // u′ + u = −u in the first mode: u = e^{-2t}.
        let s = space(1);
        let form = heat_form(s.clone());
        let g = TimeGrid::new(1.0, 256).unwrap();
        let values: Vec<DVector<f64>> = g.nodes().map(|t| DVector::from_element(1, (-2.0 * t).exp())).collect();
        let tr = Trajectory::new(&form, g, values).unwrap();
        let phi = ConvexFunctional::half_norm_squared(s);
        let r = evi_residual(&form, &phi, &tr, 20, 5).unwrap();
        assert!(r >= -10.0 * g.dt(), "{r}");
        assert!(r <= 0.0);
    }
}
