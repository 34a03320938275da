//! Command execution. Each command returns a JSON result body and an
//! outcome that decides the exit code.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use parabolic_nonlocal::evolution::{projected_convergence_study, propagate, TimeGrid, Trajectory};
use parabolic_nonlocal::galerkin::{accretivity_margin, audit_dini, estimate_bounds, log_spaced, project, GalerkinSpace, TimeForm};
use parabolic_nonlocal::models::{
    audit_field, divergence_form_assemble, preset_evi, preset_heat_timevarying, smooth_initial_data, CoefficientField, MollifierKernel,
    HEAT_INTERVALS, HEAT_KERNEL_WIDTH,
};
use parabolic_nonlocal::nonlinearity::{evi_residual, ConvexFunctional, Nonlinearity};
use parabolic_nonlocal::nonlocal::{
    annulus_energy_check, exp_shift, g_constant, g_mollified_integral, solve_nonlocal, NonlocalCondition, NonlocalProblem, SolverConfig,
};
use parabolic_nonlocal::Error;
use nalgebra::DVector;
use serde_json::{json, Value};

use crate::config::{Command, ProblemConfig, RunConfig};

pub enum Outcome {
    Ok(Value),
    AuditFailed(Value, String),
    NotConverged(Value, String),
    ConfigError(String),
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        match self {
            Outcome::Ok(_) => 0,
            Outcome::ConfigError(_) => 1,
            Outcome::AuditFailed(..) => 2,
            Outcome::NotConverged(..) => 3,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            Outcome::Ok(_) => "ok",
            Outcome::ConfigError(_) => "config_error",
            Outcome::AuditFailed(..) => "audit_failed",
            Outcome::NotConverged(..) => "not_converged",
        }
    }
}

/// Library errors raised while building a problem are configuration errors.
fn cfg_err(e: Error) -> Outcome {
    Outcome::ConfigError(e.to_string())
}

pub fn run(cfg: &RunConfig, out_dir: &Path) -> Outcome {
    let result = match cfg.command {
        Command::VerifyForm => verify_form(cfg),
        Command::Propagate => run_propagate(cfg, out_dir),
        Command::Solve => run_solve(cfg, out_dir),
        Command::Converge => run_converge(cfg, out_dir),
        Command::Evi => run_evi(cfg, out_dir),
    };
    result.unwrap_or_else(|o| o)
}

fn field(p: &ProblemConfig) -> Result<CoefficientField, Outcome> {
    match p.coefficient.as_str() {
        "holder_in_time" => Ok(CoefficientField::holder_in_time()),
        "constant" => CoefficientField::constant(1.0).map_err(cfg_err),
        "modulated" => Ok(CoefficientField::modulated(PI)),
        other => Err(Outcome::ConfigError(format!("unknown coefficient '{other}'"))),
    }
}

fn space(p: &ProblemConfig) -> Result<Arc<GalerkinSpace>, Outcome> {
    GalerkinSpace::sine(p.n_modes, PI).map(Arc::new).map_err(cfg_err)
}

fn form(p: &ProblemConfig) -> Result<TimeForm, Outcome> {
    divergence_form_assemble(&field(p)?, &space(p)?, p.quad_order, p.horizon).map_err(cfg_err)
}

fn grid(p: &ProblemConfig) -> Result<TimeGrid, Outcome> {
    TimeGrid::new(p.horizon, p.n_steps).map_err(cfg_err)
}

fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<(), Outcome> {
    let file = File::create(path).map_err(|e| Outcome::ConfigError(format!("cannot write {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    traj.write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Outcome::ConfigError(format!("cannot write {}: {e}", path.display())))
}

fn verify_form(cfg: &RunConfig) -> Result<Outcome, Outcome> {
    let p = &cfg.problem;
    let f = field(p)?;
    let form = form(p)?;
    let ts: Vec<f64> = (0..=128).map(|i| p.horizon * i as f64 / 128.0).collect();
    let bounds = estimate_bounds(&form, &ts).map_err(cfg_err)?;
    let margin = accretivity_margin(&form, &ts).map_err(cfg_err)?;
    let (lo, hi, count) = cfg.study.dini_gaps;
    let dini = audit_dini(&form, &log_spaced(lo * p.horizon, hi * p.horizon, count)).map_err(cfg_err)?;
    let fa = audit_field(&f, p.horizon, PI, 65, 17);
    let body = json!({
        "form": form.label(),
        "declared": form.constants(),
        "m_hat": bounds.m_hat,
        "alpha_hat": bounds.alpha_hat,
        "accretivity_margin": margin,
        "dini": dini,
        "field": fa,
    });
    let pass = dini.dini_pass && fa.ellipticity_pass && fa.holder_pass && bounds.alpha_hat >= f.nu - 1e-9;
    Ok(if pass {
        Outcome::Ok(body)
    } else {
        Outcome::AuditFailed(body, "form hypotheses not met".into())
    })
}

fn run_propagate(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome, Outcome> {
    let p = &cfg.problem;
    let form = form(p)?;
    let grid = grid(p)?;
    let x = smooth_initial_data(p.n_modes);
    let traj = propagate(&form, None, &grid, &x, cfg.solver.scheme).map_err(cfg_err)?;
    write_trajectory(&traj, &out_dir.join("trajectory.csv"))?;
    Ok(Outcome::Ok(json!({
        "form": form.label(),
        "max_norm_increase": traj.max_norm_increase(),
        "final_h_norm": traj.h_norms[traj.h_norms.len() - 1],
        "l2_h": traj.l2_h,
        "l2_v": traj.l2_v,
        "regularity_norm": traj.regularity_norm(),
        "time_weighted_l2_v": traj.time_weighted_l2_v(),
        "trajectory": "trajectory.csv",
    })))
}

fn run_converge(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome, Outcome> {
    let p = &cfg.problem;
    let form = form(p)?;
    let grid = grid(p)?;
    let x = smooth_initial_data(p.n_modes);
    let points = projected_convergence_study(&form, &grid, &x, &cfg.study.m_list, cfg.study.m_ref).map_err(cfg_err)?;
    let path = out_dir.join("convergence.csv");
    let mut csv = String::from("m,sup_error\n");
    for pt in &points {
        csv.push_str(&format!("{},{:e}\n", pt.m, pt.sup_error));
    }
    std::fs::write(&path, csv).map_err(|e| Outcome::ConfigError(format!("cannot write {}: {e}", path.display())))?;
    let mut sorted = points.clone();
    sorted.sort_by_key(|pt| pt.m);
    let nonincreasing = sorted.windows(2).all(|w| w[1].sup_error <= w[0].sup_error);
    Ok(Outcome::Ok(json!({
        "m_ref": cfg.study.m_ref,
        "points": points,
        "nonincreasing": nonincreasing,
        "convergence": "convergence.csv",
    })))
}

fn inline_problem(p: &ProblemConfig) -> Result<NonlocalProblem, Outcome> {
    let space = space(p)?;
    let n = p.n_modes;
    let f = match p.nonlinearity.as_str() {
        "zero" => Nonlinearity::zero(),
        "linear_damping" => Nonlinearity::linear(-1.0),
        "saturating_damping" => Nonlinearity::saturating_damping(space.clone()),
        "heat_source" => {
            if n < 2 {
                return Err(Outcome::ConfigError("heat_source needs n_modes >= 2".into()));
            }
            Nonlinearity::source(
                "heat_source",
                move |t| {
                    let mut h = DVector::zeros(n);
                    h[0] = (PI * t).cos();
                    h[1] = 0.5 * (2.0 * PI * t).sin();
                    h
                },
                1.0,
            )
        }
        other => return Err(Outcome::ConfigError(format!("unknown nonlinearity '{other}'"))),
    };
    let g = match p.condition.as_str() {
        "zero" => g_constant(DVector::zeros(n)).map_err(cfg_err)?,
        "average" => NonlocalCondition::average(p.condition_scale),
        "mollified" => {
            let kernel = MollifierKernel::bump(HEAT_KERNEL_WIDTH).map_err(cfg_err)?;
            let intervals: Vec<(f64, f64)> = HEAT_INTERVALS.iter().map(|(s, t)| (s * p.horizon, t * p.horizon)).collect();
            g_mollified_integral(&kernel, &intervals, &space, p.horizon).map_err(cfg_err)?
        }
        other => return Err(Outcome::ConfigError(format!("unknown condition '{other}'"))),
    };
    let a = f.growth_a();
    let b_sup = (0..=64).map(|i| f.growth_b(p.horizon * i as f64 / 64.0)).fold(0.0, f64::max);
    let r0 = p.r0.unwrap_or(if p.shift > a { 1.05 * b_sup.max(1e-3) / (p.shift - a) } else { 1.0 });
    let r_outer = p.r_outer.unwrap_or(f64::INFINITY);
    let base = NonlocalProblem::new(form(p)?, project(&space, n).map_err(cfg_err)?, f, g, grid(p)?, r0, r_outer).map_err(cfg_err)?;
    exp_shift(&base, p.shift).map_err(cfg_err)
}

fn build_problem(p: &ProblemConfig) -> Result<NonlocalProblem, Outcome> {
    match p.preset.as_deref() {
        Some("heat_timevarying") => preset_heat_timevarying(p.n_modes, p.n_steps).map_err(cfg_err),
        Some(other) if other != "heat_timevarying" => Err(Outcome::ConfigError(format!("preset '{other}' does not define a nonlocal problem"))),
        _ => inline_problem(p),
    }
}

fn solver_failure(e: Error, body: Value) -> Outcome {
    match e {
        Error::MaxIterations { .. } | Error::BoundaryHit { .. } | Error::NonFinite(_) => Outcome::NotConverged(body, e.to_string()),
        Error::AuditFailed(_) | Error::AuditRefused(_) => Outcome::AuditFailed(body, e.to_string()),
        other => Outcome::ConfigError(other.to_string()),
    }
}

fn solve_and_report(prob: &NonlocalProblem, cfg: &RunConfig, out_dir: &Path, mut body: Value) -> Result<(Outcome, Option<Trajectory>), Outcome> {
    let solver = SolverConfig {
        seed: cfg.problem.seed,
        ..cfg.solver
    };
    let rep = match solve_nonlocal(prob, &solver) {
        Ok(r) => r,
        Err(e) => return Ok((solver_failure(e, body), None)),
    };
    let dt = prob.grid().dt();
    let annulus = annulus_energy_check(&rep.solution, prob.r0(), prob.r_outer(), 10.0 * dt);
    let u = prob.unshift(&rep.solution).map_err(cfg_err)?;
    write_trajectory(&u, &out_dir.join("trajectory.csv"))?;
    let sqrt_t = prob.grid().horizon().sqrt();
    body["solve"] = json!({
        "converged": rep.converged,
        "residual": rep.fixed_point_residual,
        "map_residual": rep.map_residual,
        "lambda_path": rep.lambda_path,
        "apriori_lhs": rep.apriori_lhs,
        "apriori_rhs": rep.apriori_rhs,
        "apriori_ratio": rep.apriori_ratio(),
        "g_star": rep.g_star,
        "regularity_constant": rep.regularity_constant,
        "annulus": annulus,
        "mean_radius": rep.solution.l2_h / sqrt_t,
        "shift_mu": prob.shift_mu(),
        "final_h_norm": u.h_norms[u.h_norms.len() - 1],
        "trajectory": "trajectory.csv",
    });
    let outcome = if rep.converged {
        Outcome::Ok(body)
    } else {
        Outcome::NotConverged(body, "fixed-point certificate above tolerance".into())
    };
    Ok((outcome, Some(u)))
}

fn problem_summary(prob: &NonlocalProblem) -> Value {
    json!({
        "form": prob.form().label(),
        "nonlinearity": prob.nonlinearity().label(),
        "condition": prob.condition().kind(),
        "condition_bounds": prob.condition().bound_params,
        "r0": prob.r0(),
        "r_outer": prob.r_outer(),
        "shift_mu": prob.shift_mu(),
    })
}

fn run_solve(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome, Outcome> {
    let prob = build_problem(&cfg.problem)?;
    let audit = prob.audit(cfg.study.audit_samples, cfg.problem.seed).map_err(cfg_err)?;
    let mut body = json!({ "problem": problem_summary(&prob), "audit": audit });
    if !audit.pass {
        body["solve"] = Value::Null;
        return Ok(Outcome::AuditFailed(body, "problem audit failed".into()));
    }
    Ok(solve_and_report(&prob, cfg, out_dir, body)?.0)
}

fn run_evi(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome, Outcome> {
    let p = &cfg.problem;
    let space = space(p)?;
    let phi = match p.functional.as_str() {
        "quadratic" => ConvexFunctional::half_norm_squared(space.clone()),
        "pseudo_huber" => ConvexFunctional::pseudo_huber(p.n_modes),
        "zero" => ConvexFunctional::zero(),
        other => return Err(Outcome::ConfigError(format!("unknown functional '{other}'"))),
    };
    let prob = match preset_evi(p.n_modes, p.n_steps, &phi) {
        Ok(prob) => prob,
        Err(e @ Error::AuditFailed(_)) => return Ok(Outcome::AuditFailed(json!({ "functional": phi.label() }), e.to_string())),
        Err(e) => return Err(cfg_err(e)),
    };
    let body = json!({ "problem": problem_summary(&prob), "functional": phi.label() });
    let (mut outcome, traj) = solve_and_report(&prob, cfg, out_dir, body)?;
    if let (Outcome::Ok(body), Some(u)) = (&mut outcome, traj) {
        let base = prob.effective_form().map_err(cfg_err)?.shifted(-prob.shift_delta());
        let base_traj = Trajectory::new(&base, u.grid, u.values.clone()).map_err(cfg_err)?;
        let res = evi_residual(&base, &phi, &base_traj, cfg.study.evi_test_points, p.seed).map_err(cfg_err)?;
        body["evi_residual"] = json!(res);
        body["evi_floor"] = json!(-10.0 * u.grid.dt());
        if p.functional == "quadratic" {
            let err = u.grid.nodes().zip(&u.values).map(|(t, v)| (v[0] - (-2.0 * t).exp()).abs()).fold(0.0, f64::max);
            body["closed_form_error"] = json!(err);
        }
    }
    Ok(outcome)
}
