//! Seeded random sampling shared by the audits.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::evolution::TimeGrid;
use crate::galerkin::GalerkinSpace;

pub type AuditRng = ChaCha8Rng;

pub fn rng(seed: u64) -> AuditRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vector(n: usize, rng: &mut AuditRng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Uniformly distributed point on the unit sphere of the H-norm.
pub fn unit_h_direction(space: &GalerkinSpace, rng: &mut AuditRng) -> DVector<f64> {
    loop {
        let g = gaussian_vector(space.n_modes(), rng);
        let norm = space.h_norm(&g);
        if norm > 1e-12 {
            return g / norm;
        }
    }
}

/// Random path on `grid` with `‖u‖_{L²(0,T;H)} = target`.
///
/// `index == 0` always yields a constant-in-time path; later indices mix a
/// few low cosine modes in time so the sample family covers both the
/// extremal constant paths and oscillating ones.
pub fn random_path(
    space: &GalerkinSpace,
    grid: &TimeGrid,
    index: usize,
    target: f64,
    rng: &mut AuditRng,
) -> Vec<DVector<f64>> {
    let n = space.n_modes();
    let n_time_modes = if index == 0 { 1 } else { 4 };
    let coeffs: Vec<DVector<f64>> = (0..n_time_modes)
        .map(|k| {
            let decay = 1.0 / (1.0 + k as f64);
            gaussian_vector(n, rng) * decay
        })
        .collect();
    let horizon = grid.horizon();
    let mut values: Vec<DVector<f64>> = grid
        .nodes()
        .map(|t| {
            let mut u = DVector::zeros(n);
            for (k, c) in coeffs.iter().enumerate() {
                u += c * (k as f64 * std::f64::consts::PI * t / horizon).cos();
            }
            u
        })
        .collect();
    let norm = crate::evolution::l2_h_norm(space, grid, &values);
    if norm > 0.0 {
        let scale = target / norm;
        for v in values.iter_mut() {
            *v *= scale;
        }
    }
    values
}

pub fn uniform(rng: &mut AuditRng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}
