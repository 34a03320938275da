use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;

use parabolic_nonlocal::evolution::{propagate, sup_h_distance, Scheme};
use parabolic_nonlocal::galerkin::GalerkinSpace;
use parabolic_nonlocal::models::{evi_base_problem, preset_evi, preset_heat_timevarying};
use parabolic_nonlocal::nonlinearity::{ConvexFunctional, Nonlinearity};
use parabolic_nonlocal::nonlocal::{annulus_energy_check, g_constant, solve_nonlocal, SolverConfig};

#[test]
fn heat_preset_converges() {
    let prob = preset_heat_timevarying(8, 64).unwrap();
    let rep = solve_nonlocal(&prob, &SolverConfig::default()).unwrap();
    assert!(rep.converged);
    assert!(rep.fixed_point_residual <= 1e-8);
    assert!(rep.map_residual <= 1e-8);
    assert_eq!(rep.lambda_path.len(), 10);
    assert!(annulus_energy_check(&rep.solution, prob.r0(), prob.r_outer(), prob.grid().dt()).pass);
    assert!(rep.apriori_lhs <= rep.regularity_constant * rep.apriori_rhs * 10.0);
}

#[test]
fn heat_preset_with_no_data_is_zero() {
    let prob = preset_heat_timevarying(6, 64)
        .unwrap()
        .with_condition(g_constant(DVector::zeros(6)).unwrap())
        .with_nonlinearity(Nonlinearity::zero());
    let rep = solve_nonlocal(&prob, &SolverConfig::default()).unwrap();
    assert!(rep.solution.values.iter().all(|v| v.amax() == 0.0));
}

#[test]
fn heat_preset_refinement_is_second_order() {
    let cfg = SolverConfig {
        inner_tol: 1e-11,
        ..SolverConfig::default()
    };
    let end = |n| {
        let prob = preset_heat_timevarying(6, n).unwrap();
        let rep = solve_nonlocal(&prob, &cfg).unwrap();
        prob.unshift(&rep.solution).unwrap().last().clone()
    };
    let (a, b, c) = (end(64), end(128), end(256));
    let ratio = (&a - &b).norm() / (&b - &c).norm();
    assert!((3.0..5.0).contains(&ratio), "{ratio}");
}

#[test]
fn quadratic_gradient_flow_decays_at_rate_two() {
    let space = Arc::new(GalerkinSpace::sine(3, PI).unwrap());
    let prob = preset_evi(3, 512, &ConvexFunctional::half_norm_squared(space)).unwrap();
    let rep = solve_nonlocal(&prob, &SolverConfig::default()).unwrap();
    let u = prob.unshift(&rep.solution).unwrap();
    for (t, v) in u.grid.nodes().zip(&u.values) {
        assert!((v[0] - (-2.0 * t).exp()).abs() < 1e-5);
        assert!(v[1].abs() < 1e-12);
    }
}

#[test]
fn zero_functional_reduces_to_homogeneous_flow() {
    let u0 = DVector::from_vec(vec![1.0, -0.5, 0.25]);
    let prob = evi_base_problem(3, 128, &ConvexFunctional::zero(), u0.clone()).unwrap();
    let rep = solve_nonlocal(&prob, &SolverConfig::default()).unwrap();
    let eff = prob.effective_form().unwrap();
    let free = propagate(&eff, None, prob.grid(), &u0, Scheme::Cayley).unwrap();
    assert!(sup_h_distance(prob.space(), &rep.solution.values, &free.values) < 1e-8);
}

#[test]
fn heat_preset_passes_problem_audit() {
    let prob = preset_heat_timevarying(4, 64).unwrap();
    let audit = prob.audit(300, 21).unwrap();
    assert!(audit.pass);
    assert!(audit.g_bounds.iter().all(|g| g.max_g_v.is_finite()));
}
