//! Discrete Galerkin spaces, time-dependent forms, projections and the
//! hypothesis audits run against assembled stiffness matrices.
//!
//! Coordinates are with respect to a basis `φ_1, …, φ_n`. A form is given by
//! its stiffness field `S(t)` with `S(t)[i][j] = a(t, φ_j, φ_i)`, so that
//! `a(t, u, v) = vᵀ S(t) u` and the associated operator is `A(t) = G_H⁻¹ S(t)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when symmetrizing matrices before eigendecomposition.
pub const SYMMETRY_TOL: f64 = 1e-12;

pub type StiffnessFn = dyn Fn(f64) -> DMatrix<f64> + Send + Sync;
pub type ModulusFn = dyn Fn(f64) -> f64 + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// `φ_k(x) = √(2/L)·sin(kπx/L)` on `(0, L)` with Dirichlet conditions.
    Sine,
    /// User-supplied Gram matrices without pointwise basis functions.
    Custom,
}

/// A finite-dimensional pair `V_n ⊂ H_n` described by its Gram matrices.
#[derive(Debug, Clone)]
pub struct GalerkinSpace {
    n_modes: usize,
    domain_length: f64,
    basis: BasisKind,
    gram_h: DMatrix<f64>,
    gram_v: DMatrix<f64>,
    embed_const: f64,
    gram_h_inv: DMatrix<f64>,
    gram_h_sqrt: DMatrix<f64>,
    gram_h_inv_sqrt: DMatrix<f64>,
    gram_v_inv_sqrt: DMatrix<f64>,
}

impl GalerkinSpace {
    /// H-orthonormal sine basis on `(0, length)`; the V-norm is the `L²` norm
    /// of the derivative.
    pub fn sine(n_modes: usize, length: f64) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::InvalidParameter("n_modes must be at least 1".into()));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "domain length must be positive, got {length}"
            )));
        }
        let gram_h = DMatrix::identity(n_modes, n_modes);
        let gram_v = DMatrix::from_diagonal(&DVector::from_fn(n_modes, |k, _| {
            let w = (k + 1) as f64 * std::f64::consts::PI / length;
            w * w
        }));
        let gram_v_inv_sqrt = DMatrix::from_diagonal(&gram_v.diagonal().map(|d| 1.0 / d.sqrt()));
        Ok(Self {
            n_modes,
            domain_length: length,
            basis: BasisKind::Sine,
            gram_h_inv: gram_h.clone(),
            gram_h_sqrt: gram_h.clone(),
            gram_h_inv_sqrt: gram_h.clone(),
            gram_h,
            gram_v,
            embed_const: length / std::f64::consts::PI,
            gram_v_inv_sqrt,
        })
    }

    /// Space described by arbitrary Gram matrices.
    ///
    /// Both matrices must be symmetric to `1e-12` relative and positive
    /// definite. The embedding constant is the square root of the largest
    /// generalized eigenvalue of `(G_H, G_V)`.
    pub fn from_grams(gram_h: DMatrix<f64>, gram_v: DMatrix<f64>, length: f64) -> Result<Self> {
        let n = gram_h.nrows();
        if n == 0 || !gram_h.is_square() || gram_v.shape() != (n, n) {
            return Err(Error::InvalidParameter(
                "Gram matrices must be square, nonempty and of equal size".into(),
            ));
        }
        if !(length > 0.0) {
            return Err(Error::InvalidParameter("domain length must be positive".into()));
        }
        for (name, g) in [("gram_h", &gram_h), ("gram_v", &gram_v)] {
            let asym = (g - g.transpose()).abs().max();
            if asym > SYMMETRY_TOL * g.abs().max().max(1.0) {
                return Err(Error::InvalidParameter(format!("{name} is not symmetric")));
            }
        }
        let (h_sqrt, h_inv_sqrt) = spd_sqrt_pair(&gram_h, "gram_h")?;
        let (_, v_inv_sqrt) = spd_sqrt_pair(&gram_v, "gram_v")?;
        let generalized = symmetrize(&(&v_inv_sqrt * &gram_h * &v_inv_sqrt));
        let top = SymmetricEigen::new(generalized).eigenvalues.max();
        Ok(Self {
            n_modes: n,
            domain_length: length,
            basis: BasisKind::Custom,
            gram_h_inv: &h_inv_sqrt * &h_inv_sqrt,
            gram_h_sqrt: h_sqrt,
            gram_h_inv_sqrt: h_inv_sqrt,
            gram_h,
            gram_v,
            embed_const: top.sqrt(),
            gram_v_inv_sqrt: v_inv_sqrt,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn basis(&self) -> BasisKind {
        self.basis
    }

    pub fn gram_h(&self) -> &DMatrix<f64> {
        &self.gram_h
    }

    pub fn gram_v(&self) -> &DMatrix<f64> {
        &self.gram_v
    }

    pub fn gram_h_inv(&self) -> &DMatrix<f64> {
        &self.gram_h_inv
    }

    /// `G_V^{-1/2}`, the map to V-orthonormal coordinates.
    pub fn gram_v_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.gram_v_inv_sqrt
    }

    /// Constant `c` with `‖v‖_H ≤ c‖v‖_V`.
    pub fn embed_const(&self) -> f64 {
        self.embed_const
    }

    pub fn h_inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.gram_h * y))
    }

    pub fn h_norm(&self, x: &DVector<f64>) -> f64 {
        self.h_inner(x, x).max(0.0).sqrt()
    }

    pub fn v_norm(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.gram_v * x)).max(0.0).sqrt()
    }

    /// Operator norm of `M` as a map `H → H` in coordinates.
    pub fn h_operator_norm(&self, m: &DMatrix<f64>) -> f64 {
        spectral_norm(&(&self.gram_h_sqrt * m * &self.gram_h_inv_sqrt))
    }

    /// Norm of the bilinear form `(u, v) ↦ vᵀ M u` on `V × V`.
    pub fn v_form_norm(&self, m: &DMatrix<f64>) -> f64 {
        spectral_norm(&(&self.gram_v_inv_sqrt * m * &self.gram_v_inv_sqrt))
    }

    /// Operator norm of `M` as a map `H → V`.
    pub fn h_to_v_operator_norm(&self, m: &DMatrix<f64>) -> f64 {
        let (v_sqrt, _) = spd_sqrt_pair(&self.gram_v, "gram_v").expect("validated at construction");
        spectral_norm(&(v_sqrt * m * &self.gram_h_inv_sqrt))
    }

    /// Value of basis function `index` (0-based) at `x`; sine bases only.
    pub fn mode_value(&self, index: usize, x: f64) -> Option<f64> {
        match self.basis {
            BasisKind::Sine => {
                let l = self.domain_length;
                let k = (index + 1) as f64 * std::f64::consts::PI / l;
                Some((2.0 / l).sqrt() * (k * x).sin())
            }
            BasisKind::Custom => None,
        }
    }

    /// Derivative of basis function `index` (0-based) at `x`; sine bases only.
    pub fn mode_derivative(&self, index: usize, x: f64) -> Option<f64> {
        match self.basis {
            BasisKind::Sine => {
                let l = self.domain_length;
                let k = (index + 1) as f64 * std::f64::consts::PI / l;
                Some((2.0 / l).sqrt() * k * (k * x).cos())
            }
            BasisKind::Custom => None,
        }
    }

    pub(crate) fn same_as(&self, other: &GalerkinSpace) -> bool {
        std::ptr::eq(self, other)
            || (self.n_modes == other.n_modes
                && self.gram_h == other.gram_h
                && self.gram_v == other.gram_v)
    }

    pub(crate) fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n_modes {
            return Err(Error::DimensionMismatch {
                expected: self.n_modes,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Declared constants of a form: `|a| ≤ M‖u‖_V‖v‖_V`,
/// `δ‖u‖²_H + a(t,u,u) ≥ α‖u‖²_V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormConstants {
    pub bound_m: f64,
    pub coercivity_alpha: f64,
    pub shift_delta: f64,
}

/// A time-dependent bilinear form on a [`GalerkinSpace`], represented by its
/// stiffness field on `[0, T]`.
#[derive(Clone)]
pub struct TimeForm {
    space: Arc<GalerkinSpace>,
    horizon: f64,
    stiffness: Arc<StiffnessFn>,
    constants: FormConstants,
    modulus: Arc<ModulusFn>,
    label: String,
}

impl fmt::Debug for TimeForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeForm")
            .field("label", &self.label)
            .field("n_modes", &self.space.n_modes())
            .field("horizon", &self.horizon)
            .field("constants", &self.constants)
            .finish()
    }
}

impl TimeForm {
    pub fn new(
        space: Arc<GalerkinSpace>,
        horizon: f64,
        stiffness: Arc<StiffnessFn>,
        constants: FormConstants,
        modulus: Arc<ModulusFn>,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        if !(constants.bound_m > 0.0 && constants.coercivity_alpha > 0.0 && constants.shift_delta >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid form constants {constants:?}")));
        }
        let s0 = stiffness(0.0);
        if s0.shape() != (space.n_modes(), space.n_modes()) {
            return Err(Error::DimensionMismatch {
                expected: space.n_modes(),
                got: s0.nrows(),
            });
        }
        Ok(Self {
            space,
            horizon,
            stiffness,
            constants,
            modulus,
            label: String::from("form"),
        })
    }

    /// Form `κ(t)·⟨u, v⟩_V` with a scalar coefficient; `M` and `α` are read
    /// off the extrema of `κ` sampled on a fine grid.
    pub fn scaled_v_inner<K>(space: Arc<GalerkinSpace>, horizon: f64, kappa: K, modulus: Arc<ModulusFn>) -> Result<Self>
    where
        K: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let samples: Vec<f64> = (0..=1024).map(|j| kappa(horizon * j as f64 / 1024.0)).collect();
        let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let gram_v = space.gram_v().clone();
        let stiffness: Arc<StiffnessFn> = Arc::new(move |t| &gram_v * kappa(t));
        Self::new(
            space,
            horizon,
            stiffness,
            FormConstants {
                bound_m: hi,
                coercivity_alpha: lo,
                shift_delta: 0.0,
            },
            modulus,
        )
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn space(&self) -> &Arc<GalerkinSpace> {
        &self.space
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn constants(&self) -> FormConstants {
        self.constants
    }

    pub fn modulus(&self, h: f64) -> f64 {
        (self.modulus)(h)
    }

    /// `S(t)`. Fails for `t` outside `[0, T]`.
    pub fn stiffness_at(&self, t: f64) -> Result<DMatrix<f64>> {
        let slack = 1e-12 * self.horizon;
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok((self.stiffness)(t.clamp(0.0, self.horizon)))
    }

    pub(crate) fn stiffness_unchecked(&self, t: f64) -> DMatrix<f64> {
        (self.stiffness)(t.clamp(0.0, self.horizon))
    }

    /// The form `a(t,u,v) + δ⟨u,v⟩_H`, recorded with `shift_delta = 0`.
    pub fn shifted(&self, delta: f64) -> TimeForm {
        let inner = self.stiffness.clone();
        let gram_h = self.space.gram_h().clone();
        let c2 = self.space.embed_const().powi(2);
        let mut constants = self.constants;
        constants.bound_m += delta.abs() * c2;
        constants.shift_delta = (constants.shift_delta - delta).max(0.0);
        TimeForm {
            space: self.space.clone(),
            horizon: self.horizon,
            stiffness: Arc::new(move |t| inner(t) + &gram_h * delta),
            constants,
            modulus: self.modulus.clone(),
            label: format!("{}+shift({delta})", self.label),
        }
    }

    /// Reversed form `a^r(t,u,v) = a(T−t, v, u)`, i.e. `S^r(t) = S(T−t)ᵀ`.
    pub fn reversed(&self) -> TimeForm {
        let inner = self.stiffness.clone();
        let horizon = self.horizon;
        TimeForm {
            space: self.space.clone(),
            horizon,
            stiffness: Arc::new(move |t| inner((horizon - t).clamp(0.0, horizon)).transpose()),
            constants: self.constants,
            modulus: self.modulus.clone(),
            label: format!("{}^r", self.label),
        }
    }

    /// The projected form `a_m(t,u,v) = a(t,Pu,Pv) + α⟨(I−P)u,(I−P)v⟩_V`.
    ///
    /// Its coercivity constant is `α/2` and its bound is `k_m(M + α)` with
    /// `k_m = max(‖P‖_V, ‖I−P‖_V)`.
    pub fn projected(&self, proj: &Projection) -> Result<TimeForm> {
        if !self.space.same_as(&proj.space) {
            return Err(Error::SpaceMismatch);
        }
        let n = self.space.n_modes();
        let p = proj.matrix.clone();
        let q = DMatrix::identity(n, n) - &p;
        let alpha = self.constants.coercivity_alpha;
        let complement = q.transpose() * self.space.gram_v() * &q * alpha;
        let k_m = {
            let vs = self.space.gram_v_inv_sqrt();
            let (v_sqrt, _) = spd_sqrt_pair(self.space.gram_v(), "gram_v")?;
            let pn = spectral_norm(&(&v_sqrt * &p * vs));
            let qn = spectral_norm(&(&v_sqrt * &q * vs));
            pn.max(qn)
        };
        let inner = self.stiffness.clone();
        let pt = p.transpose();
        let constants = FormConstants {
            bound_m: k_m * (self.constants.bound_m + alpha),
            coercivity_alpha: alpha / 2.0,
            shift_delta: self.constants.shift_delta,
        };
        Ok(TimeForm {
            space: self.space.clone(),
            horizon: self.horizon,
            stiffness: Arc::new(move |t| &pt * inner(t) * &p + &complement),
            constants,
            modulus: self.modulus.clone(),
            label: format!("{}_m{}", self.label, proj.m),
        })
    }
}

/// `S(t)` for the form; errors for `t` outside `[0, T]`.
pub fn assemble_form_matrix(form: &TimeForm, t: f64) -> Result<DMatrix<f64>> {
    form.stiffness_at(t)
}

/// Sampled continuity and coercivity constants `(M̂, α̂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormBounds {
    pub m_hat: f64,
    pub alpha_hat: f64,
}

/// `M̂` is the largest V-form norm of `S(t)` over the grid; `α̂` the smallest
/// eigenvalue of the V-normalized symmetric part.
pub fn estimate_bounds(form: &TimeForm, t_grid: &[f64]) -> Result<FormBounds> {
    if t_grid.is_empty() {
        return Err(Error::InvalidParameter("t_grid must be nonempty".into()));
    }
    let vs = form.space.gram_v_inv_sqrt();
    let mut m_hat = 0.0_f64;
    let mut alpha_hat = f64::INFINITY;
    for &t in t_grid {
        let s = form.stiffness_at(t)?;
        let normalized = vs * &s * vs;
        if normalized.iter().any(|v| !v.is_finite()) {
            return Err(Error::Inconsistent(format!("non-finite normalized stiffness at t = {t}")));
        }
        m_hat = m_hat.max(spectral_norm(&normalized));
        let sym = symmetrize(&normalized);
        alpha_hat = alpha_hat.min(SymmetricEigen::new(sym).eigenvalues.min());
    }
    Ok(FormBounds { m_hat, alpha_hat })
}

/// Smallest eigenvalue of `sym(S(t))` relative to `G_H` over the grid; the
/// form is accretive on the grid when this is nonnegative.
pub fn accretivity_margin(form: &TimeForm, t_grid: &[f64]) -> Result<f64> {
    let hs = &form.space.gram_h_inv_sqrt;
    let mut worst = f64::INFINITY;
    for &t in t_grid {
        let s = form.stiffness_at(t)?;
        let sym = symmetrize(&(hs * s * hs));
        worst = worst.min(SymmetricEigen::new(sym).eigenvalues.min());
    }
    Ok(worst)
}

/// Result of the power-law fit of the time modulus near zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormAuditReport {
    pub m_hat: f64,
    pub alpha_hat: f64,
    /// Fitted exponent of `ω̂(h) ~ C·h^p`; `+∞` for forms constant in time.
    pub dini_exponent: f64,
    pub dini_pass: bool,
    pub sample_grid: Vec<f64>,
    pub gaps: Vec<f64>,
    pub modulus_hat: Vec<f64>,
}

/// Exponent above which a power modulus satisfies both integrability
/// conditions on `ω`.
pub const DINI_THRESHOLD: f64 = 0.5;

const DINI_TIME_SAMPLES: usize = 33;

/// Fits the exponent of the sampled modulus of continuity in time.
///
/// For each gap `h`, `ω̂(h)` is the largest V-form norm of `S(t+h) − S(t)`
/// over sampled `t ∈ [0, T−h]`. The exponent is the least-squares slope of
/// `log ω̂` against `log h` over gaps within one decade of the smallest.
pub fn audit_dini(form: &TimeForm, h_grid: &[f64]) -> Result<FormAuditReport> {
    if h_grid.len() < 4 {
        return Err(Error::AuditRefused(format!(
            "need at least 4 gap samples, got {}",
            h_grid.len()
        )));
    }
    let horizon = form.horizon;
    if h_grid.iter().any(|&h| !(h > 0.0) || h >= horizon) || h_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "gaps must be positive, strictly increasing and below the horizon".into(),
        ));
    }
    if h_grid[0] > horizon / 100.0 {
        return Err(Error::InvalidParameter(format!(
            "smallest gap {} exceeds T/100",
            h_grid[0]
        )));
    }

    let sample_grid: Vec<f64> = (0..=64).map(|j| horizon * j as f64 / 64.0).collect();
    let bounds = estimate_bounds(form, &sample_grid)?;

    let mut modulus_hat = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let span = horizon - h;
        let mut worst = 0.0_f64;
        for k in 0..DINI_TIME_SAMPLES {
            let t = span * k as f64 / (DINI_TIME_SAMPLES - 1) as f64;
            let diff = form.stiffness_at(t + h)? - form.stiffness_at(t)?;
            worst = worst.max(form.space.v_form_norm(&diff));
        }
        modulus_hat.push(worst);
    }

    let scale = bounds.m_hat.max(1.0);
    let dini_exponent = if modulus_hat.iter().all(|&w| w <= 1e-13 * scale) {
        f64::INFINITY
    } else {
        let cutoff = 10.0 * h_grid[0] * (1.0 + 1e-12);
        let pts: Vec<(f64, f64)> = h_grid
            .iter()
            .zip(&modulus_hat)
            .filter(|(&h, &w)| h <= cutoff && w > 0.0)
            .map(|(&h, &w)| (h.ln(), w.ln()))
            .collect();
        if pts.len() < 2 {
            return Err(Error::AuditRefused(
                "fewer than two positive modulus samples in the smallest decade".into(),
            ));
        }
        least_squares_slope(&pts)
    };

    Ok(FormAuditReport {
        m_hat: bounds.m_hat,
        alpha_hat: bounds.alpha_hat,
        dini_exponent,
        dini_pass: dini_exponent > DINI_THRESHOLD,
        sample_grid,
        gaps: h_grid.to_vec(),
        modulus_hat,
    })
}

/// Logarithmically spaced gaps `[lo, hi]` for [`audit_dini`].
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1).max(1) as f64).exp())
        .collect()
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// H-orthogonal projection onto the span of the first `m` basis functions.
#[derive(Debug, Clone)]
pub struct Projection {
    space: Arc<GalerkinSpace>,
    m: usize,
    matrix: DMatrix<f64>,
}

impl Projection {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn space(&self) -> &Arc<GalerkinSpace> {
        &self.space
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    pub fn complement(&self, x: &DVector<f64>) -> DVector<f64> {
        x - &self.matrix * x
    }

    /// `‖P² − P‖` (max-entry).
    pub fn idempotence_residual(&self) -> f64 {
        (&self.matrix * &self.matrix - &self.matrix).abs().max()
    }

    /// `‖G_H P − Pᵀ G_H‖` (max-entry).
    pub fn self_adjoint_residual(&self) -> f64 {
        let g = self.space.gram_h();
        (g * &self.matrix - self.matrix.transpose() * g).abs().max()
    }

    pub fn rank(&self) -> usize {
        self.matrix
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-8)
            .count()
    }
}

/// Builds `P_m`. For an H-orthonormal basis this is `diag(1,…,1,0,…,0)`.
pub fn project(space: &Arc<GalerkinSpace>, m: usize) -> Result<Projection> {
    let n = space.n_modes();
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!("projection rank {m} outside 1..={n}")));
    }
    let g = space.gram_h();
    let g_mm = g.view((0, 0), (m, m)).clone_owned();
    let inv = g_mm
        .try_inverse()
        .ok_or_else(|| Error::Inconsistent("leading Gram block is singular".into()))?;
    // P = E (Eᵀ G E)⁻¹ Eᵀ G, E = first m columns of the identity.
    let mut matrix = DMatrix::zeros(n, n);
    let top = inv * g.view((0, 0), (m, n));
    matrix.view_mut((0, 0), (m, n)).copy_from(&top);
    let proj = Projection {
        space: space.clone(),
        m,
        matrix,
    };
    let scale = g.abs().max().max(1.0);
    if proj.self_adjoint_residual() > 1e-10 * scale {
        return Err(Error::Inconsistent("projection is not H-self-adjoint".into()));
    }
    Ok(proj)
}

/// `S_m(t) = Pᵀ S(t) P + α (I−P)ᵀ G_V (I−P)`.
pub fn assemble_projected_form(form: &TimeForm, proj: &Projection, t: f64) -> Result<DMatrix<f64>> {
    form.projected(proj)?.stiffness_at(t)
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// `(G^{1/2}, G^{-1/2})` via symmetric eigendecomposition.
pub(crate) fn spd_sqrt_pair(g: &DMatrix<f64>, name: &str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(symmetrize(g));
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidParameter(format!("{name} is not positive definite")));
    }
    let q = &eig.eigenvectors;
    let sqrt = q * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * q.transpose();
    let inv_sqrt = q * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * q.transpose();
    Ok((sqrt, inv_sqrt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn zero_modulus() -> Arc<ModulusFn> {
        Arc::new(|_| 0.0)
    }

    fn kappa_form(space: &Arc<GalerkinSpace>, kappa: impl Fn(f64) -> f64 + Send + Sync + 'static) -> TimeForm {
        TimeForm::scaled_v_inner(space.clone(), 1.0, kappa, zero_modulus()).unwrap()
    }

    #[test]
    fn sine_space_grams() {
        let s = GalerkinSpace::sine(3, PI).unwrap();
        assert_eq!(s.gram_h(), &DMatrix::identity(3, 3));
        for (k, want) in [1.0, 4.0, 9.0].iter().enumerate() {
            assert_relative_eq!(s.gram_v()[(k, k)], *want, max_relative = 1e-14);
        }
        let one = GalerkinSpace::sine(1, PI).unwrap();
        assert_relative_eq!(one.embed_const(), 1.0);
        let wide = GalerkinSpace::sine(2, 2.0 * PI).unwrap();
        assert_relative_eq!(wide.gram_v()[(0, 0)], 0.25, max_relative = 1e-14);
        assert_relative_eq!(wide.gram_v()[(1, 1)], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn sine_space_rejects_bad_input() {
        assert!(GalerkinSpace::sine(0, 1.0).is_err());
        assert!(GalerkinSpace::sine(2, 0.0).is_err());
        assert!(GalerkinSpace::sine(2, -1.0).is_err());
    }

    #[test]
    fn sine_derivative_gram_matches_quadrature() {
        // Independent midpoint-rule check of ∫ φ_j' φ_i' dx.
        let s = GalerkinSpace::sine(3, PI).unwrap();
        let n = 20_000;
        let h = PI / n as f64;
        for i in 0..3 {
            for j in 0..3 {
                let val: f64 = (0..n)
                    .map(|q| {
                        let x = (q as f64 + 0.5) * h;
                        s.mode_derivative(i, x).unwrap() * s.mode_derivative(j, x).unwrap() * h
                    })
                    .sum();
                assert!((val - s.gram_v()[(i, j)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn embed_const_bounds_generalized_eigenvalue() {
        let gh = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let gv = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 5.0]);
        let s = GalerkinSpace::from_grams(gh.clone(), gv.clone(), 1.0).unwrap();
        // Largest λ with G_H x = λ G_V x, via the characteristic polynomial.
        let a = gv.determinant();
        let b = -(gh[(0, 0)] * gv[(1, 1)] + gh[(1, 1)] * gv[(0, 0)] - 2.0 * gh[(0, 1)] * gv[(0, 1)]);
        let c = gh.determinant();
        let top = (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
        assert!(s.embed_const().powi(2) >= top * (1.0 - 1e-10));
        assert_relative_eq!(s.embed_const().powi(2), top, max_relative = 1e-10);
    }

    #[test]
    fn from_grams_rejects_indefinite() {
        let gh = DMatrix::identity(2, 2);
        let gv = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GalerkinSpace::from_grams(gh, gv, 1.0).is_err());
    }

    #[test]
    fn assemble_examples() {
        let s = Arc::new(GalerkinSpace::sine(3, PI).unwrap());
        let plain = kappa_form(&s, |_| 1.0);
        assert_eq!(assemble_form_matrix(&plain, 0.3).unwrap(), *s.gram_v());
        let lin = kappa_form(&s, |t| 1.0 + t / 2.0);
        let m = assemble_form_matrix(&lin, 1.0).unwrap();
        for (k, want) in [1.5, 6.0, 13.5].iter().enumerate() {
            assert_relative_eq!(m[(k, k)], *want, max_relative = 1e-14);
        }
        let two = kappa_form(&s, |_| 2.0);
        assert_eq!(assemble_form_matrix(&two, 0.0).unwrap(), assemble_form_matrix(&plain, 0.0).unwrap() * 2.0);
        assert!(matches!(assemble_form_matrix(&plain, 1.5), Err(Error::TimeOutOfRange { .. })));
        assert!(assemble_form_matrix(&plain, -0.1).is_err());
    }

    #[test]
    fn bounds_examples() {
        let s = Arc::new(GalerkinSpace::sine(3, PI).unwrap());
        let grid: Vec<f64> = (0..=100).map(|j| j as f64 / 100.0).collect();
        let b = estimate_bounds(&kappa_form(&s, |_| 1.0), &grid).unwrap();
        assert_relative_eq!(b.m_hat, 1.0, max_relative = 1e-12);
        assert_relative_eq!(b.alpha_hat, 1.0, max_relative = 1e-12);
        let b = estimate_bounds(&kappa_form(&s, |t| 1.0 + t / 2.0), &grid).unwrap();
        assert_relative_eq!(b.m_hat, 1.5, max_relative = 1e-12);
        assert_relative_eq!(b.alpha_hat, 1.0, max_relative = 1e-12);
        let b = estimate_bounds(&kappa_form(&s, |_| 2.0), &grid).unwrap();
        assert_relative_eq!(b.m_hat, 2.0, max_relative = 1e-12);
        assert_relative_eq!(b.alpha_hat, 2.0, max_relative = 1e-12);
        assert!(estimate_bounds(&kappa_form(&s, |_| 1.0), &[]).is_err());
    }

    #[test]
    fn dini_power_moduli() {
        let s = Arc::new(GalerkinSpace::sine(3, PI).unwrap());
        let gaps = log_spaced(1e-4, 1e-1, 13);
        let good = audit_dini(&kappa_form(&s, |t| 1.0 + 0.5 * t.powf(0.6)), &gaps).unwrap();
        assert!((good.dini_exponent - 0.6).abs() < 0.05, "{}", good.dini_exponent);
        assert!(good.dini_pass);
        let bad = audit_dini(&kappa_form(&s, |t| 1.0 + t.powf(0.4)), &gaps).unwrap();
        assert!((bad.dini_exponent - 0.4).abs() < 0.05);
        assert!(!bad.dini_pass);
        let flat = audit_dini(&kappa_form(&s, |_| 3.0), &gaps).unwrap();
        assert!(flat.dini_exponent.is_infinite() && flat.dini_pass);
        assert!(flat.modulus_hat.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn dini_refuses_short_grids() {
        let s = Arc::new(GalerkinSpace::sine(2, PI).unwrap());
        let f = kappa_form(&s, |t| 1.0 + t);
        assert!(matches!(audit_dini(&f, &[1e-3, 1e-2, 1e-1]), Err(Error::AuditRefused(_))));
        assert!(audit_dini(&f, &[0.1, 0.2, 0.3, 0.4]).is_err());
    }

    #[test]
    fn projection_examples() {
        let s = Arc::new(GalerkinSpace::sine(3, PI).unwrap());
        assert_eq!(project(&s, 3).unwrap().matrix(), &DMatrix::identity(3, 3));
        let p1 = project(&s, 1).unwrap();
        assert_eq!(p1.apply(&DVector::from_vec(vec![1.0, 1.0, 1.0])), DVector::from_vec(vec![1.0, 0.0, 0.0]));
        assert_eq!(p1.self_adjoint_residual(), 0.0);
        assert_eq!(p1.rank(), 1);
        assert!(project(&s, 0).is_err());
        assert!(project(&s, 4).is_err());
    }

    #[test]
    fn projection_on_nonorthogonal_basis() {
        let gh = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 1.0]);
        let gv = DMatrix::from_row_slice(3, 3, &[4.0, 0.5, 0.0, 0.5, 6.0, 0.3, 0.0, 0.3, 9.0]);
        let s = Arc::new(GalerkinSpace::from_grams(gh, gv, 1.0).unwrap());
        let p = project(&s, 2).unwrap();
        assert!(p.idempotence_residual() <= 1e-12);
        assert!(p.self_adjoint_residual() <= 1e-12);
        assert_eq!(p.rank(), 2);
    }

    #[test]
    fn projected_form_examples() {
        let s = Arc::new(GalerkinSpace::sine(3, PI).unwrap());
        let f = kappa_form(&s, |_| 1.0);
        let full = project(&s, 3).unwrap();
        assert_eq!(assemble_projected_form(&f, &full, 0.5).unwrap(), assemble_form_matrix(&f, 0.5).unwrap());
        let p1 = project(&s, 1).unwrap();
        let m = assemble_projected_form(&f, &p1, 0.5).unwrap();
        assert_eq!(m, *s.gram_v());
        let other = Arc::new(GalerkinSpace::sine(2, PI).unwrap());
        assert!(matches!(f.projected(&project(&other, 1).unwrap()), Err(Error::SpaceMismatch)));
    }

    #[test]
    fn reversed_twice_is_identity() {
        let s = Arc::new(GalerkinSpace::sine(2, PI).unwrap());
        let base = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 4.0]);
        let stiff: Arc<StiffnessFn> = Arc::new(move |t| &base * (1.0 + t));
        let f = TimeForm::new(
            s,
            1.0,
            stiff,
            FormConstants {
                bound_m: 10.0,
                coercivity_alpha: 0.5,
                shift_delta: 0.0,
            },
            Arc::new(|h| h),
        )
        .unwrap();
        let rr = f.reversed().reversed();
        for t in [0.0, 0.25, 0.7, 1.0] {
            assert_eq!(rr.stiffness_at(t).unwrap(), f.stiffness_at(t).unwrap());
        }
        assert_eq!(f.reversed().stiffness_at(0.2).unwrap(), f.stiffness_at(0.8).unwrap().transpose());
    }
}
