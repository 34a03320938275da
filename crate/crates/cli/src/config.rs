//! JSON run configuration.

use std::path::PathBuf;

use parabolic_nonlocal::nonlocal::SolverConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    VerifyForm,
    Propagate,
    Solve,
    Converge,
    Evi,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// Problem parameters. A `preset` fixes everything except sizes and seed;
/// without one the problem is assembled from the named parts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub preset: Option<String>,
    pub n_modes: usize,
    pub n_steps: usize,
    pub horizon: f64,
    pub coefficient: String,
    pub nonlinearity: String,
    pub condition: String,
    /// Scale `c` for the `average` condition.
    pub condition_scale: f64,
    /// Functional for the `evi` command.
    pub functional: String,
    pub quad_order: usize,
    pub r0: Option<f64>,
    /// `null` stands for `R0 = +∞`.
    pub r_outer: Option<f64>,
    pub shift: f64,
    pub seed: u64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            preset: None,
            n_modes: 8,
            n_steps: 128,
            horizon: 1.0,
            coefficient: "holder_in_time".into(),
            nonlinearity: "saturating_damping".into(),
            condition: "average".into(),
            condition_scale: 0.5,
            functional: "quadratic".into(),
            quad_order: 8,
            r0: None,
            r_outer: None,
            shift: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub m_list: Vec<usize>,
    pub m_ref: usize,
    /// Smallest and largest Dini gap and their count.
    pub dini_gaps: (f64, f64, usize),
    pub audit_samples: usize,
    pub evi_test_points: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            m_list: vec![2, 4, 8],
            m_ref: 16,
            dini_gaps: (1e-4, 0.5, 12),
            audit_samples: 500,
            evi_test_points: 32,
        }
    }
}

pub const COEFFICIENTS: [&str; 3] = ["holder_in_time", "constant", "modulated"];
pub const NONLINEARITIES: [&str; 4] = ["zero", "linear_damping", "saturating_damping", "heat_source"];
pub const CONDITIONS: [&str; 3] = ["zero", "average", "mollified"];
pub const FUNCTIONALS: [&str; 3] = ["quadratic", "pseudo_huber", "zero"];
pub const PRESETS: [&str; 2] = ["heat_timevarying", "smooth_convergence"];

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        let p = &self.problem;
        let known = |name: &str, list: &[&str], what: &str| {
            if list.contains(&name) {
                Ok(())
            } else {
                Err(format!("unknown {what} '{name}', expected one of {list:?}"))
            }
        };
        if let Some(preset) = &p.preset {
            known(preset, &PRESETS, "preset")?;
        }
        known(&p.coefficient, &COEFFICIENTS, "coefficient")?;
        known(&p.nonlinearity, &NONLINEARITIES, "nonlinearity")?;
        known(&p.condition, &CONDITIONS, "condition")?;
        known(&p.functional, &FUNCTIONALS, "functional")?;
        if p.n_modes == 0 || p.n_steps == 0 {
            return Err("n_modes and n_steps must be positive".into());
        }
        if !(p.horizon > 0.0 && p.horizon.is_finite()) {
            return Err(format!("horizon must be positive, got {}", p.horizon));
        }
        if p.quad_order < 4 {
            return Err(format!("quad_order must be at least 4, got {}", p.quad_order));
        }
        if !(p.shift >= 0.0) {
            return Err(format!("shift must be nonnegative, got {}", p.shift));
        }
        self.solver.validate().map_err(|e| e.to_string())?;
        if self.command == Command::Converge && self.study.m_ref > p.n_modes {
            return Err(format!("m_ref {} exceeds n_modes {}", self.study.m_ref, p.n_modes));
        }
        Ok(())
    }
}
