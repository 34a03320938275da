//! Concrete problem instances on the interval `(0, L)`: divergence-form
//! coefficient fields, mollifier kernels and the bundled presets.

use std::fmt;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::TimeGrid;
use crate::galerkin::{project, BasisKind, FormConstants, GalerkinSpace, StiffnessFn, TimeForm};
use crate::nonlinearity::{check_monotone, gradient_consistency, ConvexFunctional, Nonlinearity, GRADIENT_CONSISTENCY_TOL};
use crate::nonlocal::{estimate_g_star, exp_shift, g_constant, g_mollified_integral, NonlocalProblem};

pub type FieldFn = dyn Fn(f64, f64) -> f64 + Send + Sync;
pub type ProfileFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Scalar diffusion coefficient `κ(t, x)` with ellipticity floor `nu` and
/// Hölder-in-time bound `|κ(t1,x) − κ(t2,x)| ≤ K|t1 − t2|^β`.
#[derive(Clone)]
pub struct CoefficientField {
    eval: Arc<FieldFn>,
    pub nu: f64,
    pub holder_k: f64,
    pub holder_exponent: f64,
    label: String,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("label", &self.label)
            .field("nu", &self.nu)
            .field("holder_k", &self.holder_k)
            .field("holder_exponent", &self.holder_exponent)
            .finish()
    }
}

impl CoefficientField {
    pub fn new(label: impl Into<String>, eval: Arc<FieldFn>, nu: f64, holder_k: f64, holder_exponent: f64) -> Result<Self> {
        if !(nu > 0.0 && holder_k > 0.0) {
            return Err(Error::InvalidParameter(format!("need nu > 0 and K > 0, got {nu}, {holder_k}")));
        }
        if !(holder_exponent > 0.5 && holder_exponent <= 1.0) {
            return Err(Error::InvalidParameter(format!("Hölder exponent {holder_exponent} outside (1/2, 1]")));
        }
        Ok(Self {
            eval,
            nu,
            holder_k,
            holder_exponent,
            label: label.into(),
        })
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        (self.eval)(t, x)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `κ(t, x) = 1 + ½t^0.6`.
    pub fn holder_in_time() -> Self {
        Self::new("holder_in_time", Arc::new(|t, _| 1.0 + 0.5 * t.max(0.0).powf(0.6)), 1.0, 0.5, 0.6).unwrap()
    }

    /// Time-independent `κ ≡ c`. `K` is a nominal tiny positive value.
    pub fn constant(c: f64) -> Result<Self> {
        Self::new(format!("constant({c})"), Arc::new(move |_, _| c), c, 1e-12, 1.0)
    }

    /// `κ(t, x) = (1 + ½t^0.6)(1 + 0.3cos(2πx/L))`, which couples modes.
    pub fn modulated(length: f64) -> Self {
        let k = 2.0 * std::f64::consts::PI / length;
        Self::new(
            "modulated",
            Arc::new(move |t, x| (1.0 + 0.5 * t.max(0.0).powf(0.6)) * (1.0 + 0.3 * (k * x).cos())),
            0.7,
            0.65,
            0.6,
        )
        .unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldAudit {
    pub min_value: f64,
    pub max_value: f64,
    pub ellipticity_pass: bool,
    /// Largest `|Δκ| − K|Δt|^β` over sampled pairs.
    pub holder_worst_excess: f64,
    pub holder_pass: bool,
}

/// Samples `κ` on an `n_t × n_x` grid and checks ellipticity and the
/// Hölder bound on every pair of sampled times.
pub fn audit_field(field: &CoefficientField, horizon: f64, length: f64, n_t: usize, n_x: usize) -> FieldAudit {
    let n_t = n_t.max(2);
    let n_x = n_x.max(1);
    let ts: Vec<f64> = (0..n_t).map(|i| horizon * i as f64 / (n_t - 1) as f64).collect();
    let xs: Vec<f64> = (0..n_x).map(|i| length * (i as f64 + 0.5) / n_x as f64).collect();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut worst = f64::NEG_INFINITY;
    for &x in &xs {
        let vals: Vec<f64> = ts.iter().map(|&t| field.eval(t, x)).collect();
        for (i, &a) in vals.iter().enumerate() {
            lo = lo.min(a);
            hi = hi.max(a);
            for (j, &b) in vals.iter().enumerate().skip(i + 1) {
                let excess = (a - b).abs() - field.holder_k * (ts[j] - ts[i]).powf(field.holder_exponent);
                worst = worst.max(excess);
            }
        }
    }
    FieldAudit {
        min_value: lo,
        max_value: hi,
        ellipticity_pass: lo >= field.nu - 1e-12,
        holder_worst_excess: worst,
        holder_pass: worst <= 1e-10,
    }
}

struct QuadTable {
    weights: Vec<f64>,
    points: Vec<f64>,
    /// `derivs[k][p] = φ_k′(x_p)`.
    derivs: Vec<Vec<f64>>,
}

impl QuadTable {
    fn build(space: &GalerkinSpace, order: usize) -> Result<Self> {
        let rule = GaussLegendre::new(order).map_err(|e| Error::InvalidParameter(format!("quadrature order {order}: {e}")))?;
        let panels = 8 * space.n_modes();
        let width = space.domain_length() / panels as f64;
        let mut weights = Vec::with_capacity(panels * order);
        let mut points = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * width;
            for &(node, w) in rule.as_node_weight_pairs() {
                points.push(mid + 0.5 * width * node);
                weights.push(0.5 * width * w);
            }
        }
        let derivs = (0..space.n_modes())
            .map(|k| points.iter().map(|&x| space.mode_derivative(k, x).unwrap()).collect())
            .collect();
        Ok(Self { weights, points, derivs })
    }

    fn stiffness(&self, field: &FieldFn, t: f64) -> DMatrix<f64> {
        let n = self.derivs.len();
        let kw: Vec<f64> = self.points.iter().zip(&self.weights).map(|(&x, &w)| w * field(t, x)).collect();
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = kw.iter().enumerate().map(|(p, w)| w * self.derivs[i][p] * self.derivs[j][p]).sum();
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }
}

/// Stiffness `S(t)[i][j] = ∫ κ(t,x) φ_j′ φ_i′ dx` by composite Gauss–Legendre
/// quadrature (eight panels per mode), checked against the rule
/// of doubled order at `t = 0, T/2, T`.
pub fn divergence_form_assemble(field: &CoefficientField, space: &Arc<GalerkinSpace>, quad_order: usize, horizon: f64) -> Result<TimeForm> {
    if quad_order < 4 {
        return Err(Error::InvalidParameter(format!("quadrature order must be at least 4, got {quad_order}")));
    }
    if space.basis() != BasisKind::Sine {
        return Err(Error::InvalidParameter("divergence-form assembly needs the sine basis".into()));
    }
    let table = QuadTable::build(space, quad_order)?;
    let check = QuadTable::build(space, 2 * quad_order)?;
    let mut change = 0.0_f64;
    for t in [0.0, 0.5 * horizon, horizon] {
        let d = table.stiffness(&*field.eval, t) - check.stiffness(&*field.eval, t);
        change = change.max(d.amax());
    }
    if change > 1e-8 {
        return Err(Error::QuadratureNonconvergence { change });
    }
    let mut sup = f64::NEG_INFINITY;
    for i in 0..=256 {
        let t = horizon * i as f64 / 256.0;
        for &x in &table.points {
            sup = sup.max(field.eval(t, x));
        }
    }
    let eval = field.eval.clone();
    let stiffness: Arc<StiffnessFn> = Arc::new(move |t| table.stiffness(&*eval, t));
    let (k, beta) = (field.holder_k, field.holder_exponent);
    let form = TimeForm::new(
        space.clone(),
        horizon,
        stiffness,
        FormConstants {
            bound_m: sup,
            coercivity_alpha: field.nu,
            shift_delta: 0.0,
        },
        Arc::new(move |h| k * h.max(0.0).powf(beta)),
    )?;
    Ok(form.with_label(format!("div({})", field.label)))
}

/// Nonnegative, even, compactly supported kernel of unit mass on
/// `[−half_width, half_width]`.
#[derive(Clone)]
pub struct MollifierKernel {
    profile: Arc<ProfileFn>,
    half_width: f64,
    mass: f64,
    derivative_mass: f64,
}

impl fmt::Debug for MollifierKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MollifierKernel")
            .field("half_width", &self.half_width)
            .field("mass", &self.mass)
            .field("derivative_mass", &self.derivative_mass)
            .finish()
    }
}

fn composite(lo: f64, hi: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    let rule = GaussLegendre::new(16).unwrap();
    let h = (hi - lo) / panels as f64;
    (0..panels).map(|p| rule.integrate(lo + p as f64 * h, lo + (p + 1) as f64 * h, &f)).sum()
}

impl MollifierKernel {
    /// `ρ(y) ∝ exp(−1/(1 − (y/ε)²))` on `|y| < ε`. The derivative mass is
    /// `2ρ(0) ≈ 1.657/ε`.
    pub fn bump(half_width: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel width must be positive, got {half_width}")));
        }
        let raw = move |y: f64| {
            let s = y / half_width;
            if s.abs() < 1.0 { (-1.0 / (1.0 - s * s)).exp() } else { 0.0 }
        };
        let z = composite(-half_width, half_width, 64, raw);
        Self::from_profile(Arc::new(move |y| raw(y) / z), half_width)
    }

    /// Wraps an even profile supported in `[−half_width, half_width]`; the
    /// mass and `∫|ρ′|` are computed by quadrature.
    pub fn from_profile(profile: Arc<ProfileFn>, half_width: f64) -> Result<Self> {
        let mass = composite(-half_width, half_width, 128, &*profile);
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::AuditFailed(format!("kernel mass {mass} is not 1")));
        }
        let h = 1e-6 * half_width;
        let p = profile.clone();
        let derivative_mass = composite(-half_width, half_width, 128, move |y| ((p(y + h) - p(y - h)) / (2.0 * h)).abs());
        Ok(Self {
            profile,
            half_width,
            mass,
            derivative_mass,
        })
    }

    pub fn eval(&self, y: f64) -> f64 {
        (self.profile)(y)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Quadrature surrogate for `‖ρ′‖_{L¹}`.
    pub fn derivative_mass(&self) -> f64 {
        self.derivative_mass
    }

    /// Coordinates of `u ↦ ρ ⊛ u` on the sine basis, convolving against the
    /// odd `2L`-periodic extension: `diag(∫ρ(y)cos(kπy/L)dy)`.
    pub fn convolution_matrix(&self, space: &GalerkinSpace) -> Result<DMatrix<f64>> {
        if space.basis() != BasisKind::Sine {
            return Err(Error::InvalidParameter("convolution needs the sine basis".into()));
        }
        let l = space.domain_length();
        let w = self.half_width;
        let diag = DVector::from_fn(space.n_modes(), |k, _| {
            let freq = (k + 1) as f64 * std::f64::consts::PI / l;
            composite(-w, w, 128, |y| self.eval(y) * (freq * y).cos())
        });
        Ok(DMatrix::from_diagonal(&diag))
    }
}

/// Bundled heat preset parameters.
pub const HEAT_SOURCE_BOUND: f64 = 1.0;
pub const HEAT_SHIFT_EPS: f64 = 0.5;
pub const HEAT_KERNEL_WIDTH: f64 = 2.0;
pub const HEAT_INTERVALS: [(f64, f64); 2] = [(0.2, 0.4), (0.6, 0.8)];

/// Linear heat problem on `(0, π) × (0, 1]` with `κ = 1 + ½t^0.6`, the
/// bounded source `h(t) = cos(πt)e₁ + ½sin(2πt)e₂` and the mollified
/// integral condition on `[0.2, 0.4] ∪ [0.6, 0.8]`, shifted by `ε = 0.5`.
/// The annulus is `r0 = 1.05·‖h‖_∞/ε`, `R0 = ∞`.
pub fn preset_heat_timevarying(n_modes: usize, n_steps: usize) -> Result<NonlocalProblem> {
    if n_modes < 4 || n_steps < 64 {
        return Err(Error::InvalidParameter(format!("heat preset needs n_modes >= 4 and n_steps >= 64, got {n_modes}, {n_steps}")));
    }
    let space = Arc::new(GalerkinSpace::sine(n_modes, std::f64::consts::PI)?);
    let form = divergence_form_assemble(&CoefficientField::holder_in_time(), &space, 8, 1.0)?;
    let grid = TimeGrid::new(1.0, n_steps)?;
    let f = Nonlinearity::source(
        "heat_source",
        move |t| {
            let mut h = DVector::zeros(n_modes);
            h[0] = (std::f64::consts::PI * t).cos();
            h[1] = 0.5 * (2.0 * std::f64::consts::PI * t).sin();
            h
        },
        HEAT_SOURCE_BOUND,
    );
    let kernel = MollifierKernel::bump(HEAT_KERNEL_WIDTH)?;
    let g = g_mollified_integral(&kernel, &HEAT_INTERVALS, &space, 1.0)?;
    let r0 = 1.05 * HEAT_SOURCE_BOUND / HEAT_SHIFT_EPS;
    let base = NonlocalProblem::new(form, project(&space, n_modes)?, f, g, grid, r0, f64::INFINITY)?;
    exp_shift(&base, HEAT_SHIFT_EPS)
}

/// Unshifted gradient-flow problem `u′ + Au = −∇φ(u)`, `u(0) = u0`, with
/// `κ ≡ 1` on `(0, π)`, `T = 1`.
pub fn evi_base_problem(n_modes: usize, n_steps: usize, phi: &ConvexFunctional, u0: DVector<f64>) -> Result<NonlocalProblem> {
    let space = Arc::new(GalerkinSpace::sine(n_modes, std::f64::consts::PI)?);
    if u0.len() != n_modes {
        return Err(Error::DimensionMismatch {
            expected: n_modes,
            got: u0.len(),
        });
    }
    let form = divergence_form_assemble(&CoefficientField::constant(1.0)?, &space, 8, 1.0)?;
    let grid = TimeGrid::new(1.0, n_steps)?;
    let r0 = 1.05 * space.h_norm(&u0).max(1e-3);
    NonlocalProblem::new(form, project(&space, n_modes)?, Nonlinearity::negative_gradient(phi), g_constant(u0)?, grid, r0, f64::INFINITY)
}

/// Gradient-flow preset with `u0 = e₁`, shifted by `ε = a + 1` where `a` is
/// the growth constant of `∇φ`. Refuses functionals that fail the monotone
/// or gradient-consistency audits.
pub fn preset_evi(n_modes: usize, n_steps: usize, phi: &ConvexFunctional) -> Result<NonlocalProblem> {
    let mut u0 = DVector::zeros(n_modes);
    u0[0] = 1.0;
    let base = evi_base_problem(n_modes, n_steps, phi, u0)?;
    let space = base.space().clone();
    let mono = check_monotone(phi, &space, 200, 17)?;
    if !mono.pass {
        return Err(Error::AuditFailed(format!("{} is not monotone (worst {})", phi.label(), mono.worst_inner)));
    }
    let consistency = gradient_consistency(phi, &space, 64, 1e-5, 17)?;
    if consistency > GRADIENT_CONSISTENCY_TOL {
        return Err(Error::AuditFailed(format!("{} gradient inconsistent ({consistency:e})", phi.label())));
    }
    let a = phi.growth_a;
    let eps = a + 1.0;
    let t = base.grid().horizon();
    let g_star = estimate_g_star(base.condition(), &space, base.grid(), base.r0() * t.sqrt(), 16, 17);
    let r0 = 1.05 * (t.sqrt() * g_star).max(base.r0()).max(phi.growth_b / (eps - a));
    exp_shift(&base.with_annulus(r0, f64::INFINITY)?, eps)
}

/// Smooth initial data for convergence studies: the sine coefficients of
/// `x(π − x)`, `√(π/2)·8/(πk³)` for odd `k`, on the unit-length-normalized
/// basis of `(0, π)`.
pub fn smooth_initial_data(n_modes: usize) -> DVector<f64> {
    let pi = std::f64::consts::PI;
    DVector::from_fn(n_modes, |i, _| {
        let k = (i + 1) as f64;
        if (i + 1) % 2 == 1 { (pi / 2.0).sqrt() * 8.0 / (pi * k.powi(3)) } else { 0.0 }
    })
}

/// Form, grid and initial value for the projected convergence study: the
/// mode-coupling field [`CoefficientField::modulated`] on `(0, π)`, `T = 1`.
pub fn preset_smooth_convergence(n_modes: usize, n_steps: usize) -> Result<(TimeForm, TimeGrid, DVector<f64>)> {
    let space = Arc::new(GalerkinSpace::sine(n_modes, std::f64::consts::PI)?);
    let form = divergence_form_assemble(&CoefficientField::modulated(std::f64::consts::PI), &space, 8, 1.0)?;
    Ok((form, TimeGrid::new(1.0, n_steps)?, smooth_initial_data(n_modes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::galerkin::{audit_dini, estimate_bounds, log_spaced};
    use approx::assert_relative_eq;

    fn sine(n: usize) -> Arc<GalerkinSpace> {
        Arc::new(GalerkinSpace::sine(n, std::f64::consts::PI).unwrap())
    }

    #[test]
    fn unit_coefficient_gives_squared_wavenumbers() {
        let form = divergence_form_assemble(&CoefficientField::constant(1.0).unwrap(), &sine(3), 4, 1.0).unwrap();
        let s = form.stiffness_at(0.3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { ((i + 1) * (i + 1)) as f64 } else { 0.0 };
                assert!((s[(i, j)] - expect).abs() < 1e-12, "{i} {j} {}", s[(i, j)]);
            }
        }
    }

    #[test]
    fn constant_two_doubles_the_matrix() {
        let space = sine(5);
        let one = divergence_form_assemble(&CoefficientField::constant(1.0).unwrap(), &space, 6, 1.0).unwrap();
        let two = divergence_form_assemble(&CoefficientField::constant(2.0).unwrap(), &space, 6, 1.0).unwrap();
        let d = two.stiffness_at(0.5).unwrap() - one.stiffness_at(0.5).unwrap() * 2.0;
        assert!(d.amax() < 1e-12);
    }

    #[test]
    fn holder_field_is_separable() {
        let space = sine(4);
        let form = divergence_form_assemble(&CoefficientField::holder_in_time(), &space, 8, 1.0).unwrap();
        for t in [0.0, 0.25, 1.0] {
            let s = form.stiffness_at(t).unwrap();
            let expect = space.gram_v() * (1.0 + 0.5 * f64::powf(t, 0.6));
            assert!((s - expect).amax() < 1e-11);
        }
        let ts: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        let b = estimate_bounds(&form, &ts).unwrap();
        assert_relative_eq!(b.alpha_hat, 1.0, epsilon = 1e-6);
        assert_relative_eq!(b.m_hat, 1.5, epsilon = 1e-6);
        let rep = audit_dini(&form, &log_spaced(1e-4, 0.5, 12)).unwrap();
        assert!((rep.dini_exponent - 0.6).abs() < 0.05, "{}", rep.dini_exponent);
    }

    #[test]
    fn modulated_field_couples_modes_and_stays_coercive() {
        let space = sine(6);
        let field = CoefficientField::modulated(std::f64::consts::PI);
        let audit = audit_field(&field, 1.0, std::f64::consts::PI, 33, 17);
        assert!(audit.ellipticity_pass && audit.holder_pass, "{audit:?}");
        let form = divergence_form_assemble(&field, &space, 8, 1.0).unwrap();
        let s = form.stiffness_at(0.5).unwrap();
        assert!(s[(0, 2)].abs() > 1e-3);
        let b = estimate_bounds(&form, &[0.0, 0.5, 1.0]).unwrap();
        assert!(b.alpha_hat >= 0.7 - 1e-9);
    }

    #[test]
    fn quadrature_order_floor() {
        assert!(divergence_form_assemble(&CoefficientField::holder_in_time(), &sine(3), 3, 1.0).is_err());
    }

    #[test]
    fn rough_field_fails_quadrature_check() {
        let field = CoefficientField::new("step", Arc::new(|_, x: f64| if x < 1.0 { 1.0 } else { 2.0 }), 1.0, 1e-12, 1.0).unwrap();
        assert!(matches!(
            divergence_form_assemble(&field, &sine(5), 4, 1.0),
            Err(Error::QuadratureNonconvergence { .. })
        ));
    }

    #[test]
    fn field_audits() {
        let good = audit_field(&CoefficientField::holder_in_time(), 1.0, 1.0, 65, 3);
        assert!(good.ellipticity_pass && good.holder_pass);
        assert_eq!(good.min_value, 1.0);
        let liar = CoefficientField::new("liar", Arc::new(|t, _| 1.0 + t), 1.0, 0.1, 1.0).unwrap();
        assert!(!audit_field(&liar, 1.0, 1.0, 17, 2).holder_pass);
        let weak = CoefficientField::new("weak", Arc::new(|_, x: f64| 0.5 + x), 1.0, 1e-12, 1.0).unwrap();
        assert!(!audit_field(&weak, 1.0, 1.0, 5, 8).ellipticity_pass);
        assert!(CoefficientField::new("bad", Arc::new(|_, _| 1.0), 1.0, 1.0, 0.4).is_err());
    }

    #[test]
    fn bump_kernel_mass_and_derivative_mass() {
        let k = MollifierKernel::bump(2.0).unwrap();
        assert!((k.mass() - 1.0).abs() < 1e-10);
        let expected = 2.0 * k.eval(0.0);
        assert!((k.derivative_mass() - expected).abs() < 1e-6, "{} {expected}", k.derivative_mass());
        assert!((k.derivative_mass() - 0.83).abs() < 0.01);
        assert!(MollifierKernel::bump(1.0).unwrap().derivative_mass() > 1.0);
        assert!(MollifierKernel::from_profile(Arc::new(|y: f64| if y.abs() < 1.0 { 1.0 } else { 0.0 }), 1.0).is_err());
    }

    #[test]
    fn convolution_of_low_mode_is_near_identity_for_narrow_kernel() {
        let space = sine(4);
        let c = MollifierKernel::bump(0.01).unwrap().convolution_matrix(&space).unwrap();
        assert!((c[(0, 0)] - 1.0).abs() < 1e-4);
        let wide = MollifierKernel::bump(2.0).unwrap().convolution_matrix(&space).unwrap();
        assert!(wide[(3, 3)].abs() < wide[(0, 0)].abs());
        assert!(space.h_operator_norm(&wide) <= 1.0 + 1e-12);
    }

    #[test]
    fn heat_preset_floors_and_audit() {
        assert!(preset_heat_timevarying(3, 64).is_err());
        assert!(preset_heat_timevarying(4, 32).is_err());
        let prob = preset_heat_timevarying(6, 64).unwrap();
        assert!(prob.condition().solver_admissible());
        let audit = prob.audit(200, 5).unwrap();
        assert!(audit.pass, "{audit:?}");
    }

    #[test]
    fn evi_preset_refuses_nonconvex() {
        let concave = ConvexFunctional::new(
            "concave",
            Arc::new(|x: &DVector<f64>| -0.5 * x.norm_squared()),
            Arc::new(|x: &DVector<f64>| -x),
            Some(1.0),
            (1.0, 0.0),
        );
        assert!(matches!(preset_evi(3, 64, &concave), Err(Error::AuditFailed(_))));
    }

    #[test]
    fn smooth_data_coefficients() {
        let x = smooth_initial_data(4);
        assert_eq!(x[1], 0.0);
        assert_relative_eq!(x[2] * 27.0, x[0], epsilon = 1e-15);
    }
}
