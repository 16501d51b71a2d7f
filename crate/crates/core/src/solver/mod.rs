//! Damped Newton on the discrete oblique system, embedded in
//! θ-continuation from the exact solution of the x-frozen problem.

mod theta;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretization::{
    evaluate, gradient_at, AssemblyError, AssemblyOptions, DiscreteField, GridError, SpaceTimeGrid,
};
use crate::models::{Model, ModelError, ModelRef};
use crate::reformulation::{ellipticity_gap, invert_h, ReformError};

pub use theta::{base_solution, theta_model, ThetaModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationConfig {
    pub dtheta_init: f64,
    pub dtheta_max: f64,
    pub max_halvings: usize,
    /// Tolerance on the scaled residual ∞-norm.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub armijo_c: f64,
    pub armijo_min_step: f64,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            dtheta_init: 0.1,
            dtheta_max: 0.25,
            max_halvings: 8,
            newton_tol: 1e-9,
            newton_max_iter: 30,
            armijo_c: 1e-4,
            armijo_min_step: 1e-4,
        }
    }
}

impl ContinuationConfig {
    pub fn validate(&self) -> Result<(), String> {
        let reals = [
            ("dtheta_init", self.dtheta_init),
            ("dtheta_max", self.dtheta_max),
            ("newton_tol", self.newton_tol),
            ("armijo_c", self.armijo_c),
            ("armijo_min_step", self.armijo_min_step),
        ];
        for (name, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.max_halvings == 0 || self.newton_max_iter == 0 {
            return Err("max_halvings and newton_max_iter must be positive".into());
        }
        if self.dtheta_init > self.dtheta_max {
            return Err(format!(
                "dtheta_init ({}) exceeds dtheta_max ({})",
                self.dtheta_init, self.dtheta_max
            ));
        }
        if self.armijo_c >= 1.0 || self.armijo_min_step > 1.0 {
            return Err("armijo_c must be < 1 and armijo_min_step <= 1".into());
        }
        Ok(())
    }
}

/// Accepted continuation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStep {
    pub theta: f64,
    pub iters: usize,
    pub residual: f64,
    pub min_m: f64,
    pub max_m: f64,
    /// `max |(D_x u, u_t)|` over the nodes.
    pub max_grad: f64,
    pub min_gap: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContinuationTrace {
    pub steps: Vec<ContinuationStep>,
}

impl ContinuationTrace {
    pub fn last_theta(&self) -> Option<f64> {
        self.steps.last().map(|s| s.theta)
    }

    pub fn min_gap(&self) -> f64 {
        self.steps.iter().fold(f64::INFINITY, |a, s| a.min(s.min_gap))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    /// Scaled residual at each iterate, starting with the initial guess.
    pub residual_history: Vec<f64>,
    /// Accepted damping factor of each step.
    pub damping_history: Vec<f64>,
    /// `H^{-1}(x, D_x u, u_t)` at the returned iterate.
    pub density: Vec<f64>,
}

impl NewtonReport {
    pub fn residual(&self) -> f64 {
        *self.residual_history.last().expect("history holds the initial residual")
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("Newton did not converge in {iterations} iterations (scaled residual {residual:e})")]
    MaxIterations {
        iterations: usize,
        residual: f64,
        last: Box<DiscreteField>,
    },
    #[error("Armijo step fell below {min_step} after {iterations} iterations (scaled residual {residual:e})")]
    StepUnderflow {
        iterations: usize,
        residual: f64,
        min_step: f64,
        last: Box<DiscreteField>,
    },
    #[error("linear solve failed after {iterations} iterations: {message}")]
    LinearSolve {
        iterations: usize,
        message: String,
        last: Box<DiscreteField>,
    },
    #[error("density inversion failed after {iterations} iterations: {source}")]
    Inversion {
        iterations: usize,
        source: AssemblyError,
        last: Box<DiscreteField>,
    },
    #[error("continuation stalled at theta = {theta_star} (last attempted step {dtheta:e}): {cause}")]
    Stall {
        theta_star: f64,
        dtheta: f64,
        cause: Box<SolverError>,
        last_good: Box<DiscreteField>,
        trace: ContinuationTrace,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid continuation config: {0}")]
    Config(String),
}

impl SolverError {
    /// Last iterate carried by a Newton failure.
    pub fn last_iterate(&self) -> Option<&DiscreteField> {
        match self {
            SolverError::MaxIterations { last, .. }
            | SolverError::StepUnderflow { last, .. }
            | SolverError::LinearSolve { last, .. }
            | SolverError::Inversion { last, .. } => Some(last),
            SolverError::Stall { last_good, .. } => Some(last_good),
            _ => None,
        }
    }
}

fn classify(err: AssemblyError, iterations: usize, last: &DiscreteField) -> SolverError {
    match err {
        AssemblyError::Grid(g) => SolverError::Grid(g),
        AssemblyError::Node {
            source: ReformError::Model(m),
            ..
        } if !matches!(m, ModelError::DensityTooSmall { .. }) => SolverError::Model(m),
        other => SolverError::Inversion {
            iterations,
            source: other,
            last: Box::new(last.clone()),
        },
    }
}

fn scaled_norm(r: &[f64], scale: &[f64]) -> f64 {
    r.iter().zip(scale).fold(0.0, |acc, (v, s)| acc.max(v.abs() / s))
}

/// Damped Newton from `u0` with Armijo backtracking on the scaled
/// residual `max_i |F_i| / (1 + max_j |J_ij|)`.
pub fn newton_solve(
    model: &dyn Model,
    grid: &SpaceTimeGrid,
    u0: DiscreteField,
    cfg: &ContinuationConfig,
) -> Result<(DiscreteField, NewtonReport), SolverError> {
    newton_solve_forced(model, grid, u0, None, cfg)
}

/// [`newton_solve`] for `F(u) = f`.
pub fn newton_solve_forced(
    model: &dyn Model,
    grid: &SpaceTimeGrid,
    u0: DiscreteField,
    forcing: Option<&[f64]>,
    cfg: &ContinuationConfig,
) -> Result<(DiscreteField, NewtonReport), SolverError> {
    cfg.validate().map_err(SolverError::Config)?;
    let mut u = u0;
    let opts = AssemblyOptions {
        forcing,
        density_hint: None,
        with_jacobian: true,
    };
    let mut eval = evaluate(model, grid, &u, &opts).map_err(|e| classify(e, 0, &u))?;
    let mut residual_history = Vec::new();
    let mut damping_history = Vec::new();
    let mut iterations = 0;
    loop {
        let jac = eval.jacobian.take().expect("jacobian requested");
        let scale: Vec<f64> = jac.row_max_abs().iter().map(|v| 1.0 + v).collect();
        let norm = scaled_norm(&eval.residual, &scale);
        residual_history.push(norm);
        log::debug!("newton iter {iterations}: scaled residual {norm:e}");
        if norm <= cfg.newton_tol {
            return Ok((
                u,
                NewtonReport {
                    iterations,
                    residual_history,
                    damping_history,
                    density: eval.density,
                },
            ));
        }
        if iterations >= cfg.newton_max_iter {
            return Err(SolverError::MaxIterations {
                iterations,
                residual: norm,
                last: Box::new(u),
            });
        }
        let rhs: Vec<f64> = eval.residual.iter().map(|v| -v).collect();
        let delta = jac.solve(&rhs).map_err(|e| SolverError::LinearSolve {
            iterations,
            message: e.to_string(),
            last: Box::new(u.clone()),
        })?;
        let trial_opts = AssemblyOptions {
            forcing,
            density_hint: Some(&eval.density),
            with_jacobian: false,
        };
        let mut lambda = 1.0;
        let mut last_failure: Option<AssemblyError> = None;
        let accepted = loop {
            if lambda < cfg.armijo_min_step {
                break None;
            }
            let trial = u.axpy(lambda, &delta);
            match evaluate(model, grid, &trial, &trial_opts) {
                Ok(e) => {
                    last_failure = None;
                    if scaled_norm(&e.residual, &scale) <= (1.0 - cfg.armijo_c * lambda) * norm {
                        break Some(trial);
                    }
                }
                Err(AssemblyError::Grid(g)) => return Err(g.into()),
                Err(e) => last_failure = Some(e),
            }
            lambda *= 0.5;
        };
        let Some(next) = accepted else {
            return Err(match last_failure {
                Some(e) => classify(e, iterations, &u),
                None => SolverError::StepUnderflow {
                    iterations,
                    residual: norm,
                    min_step: cfg.armijo_min_step,
                    last: Box::new(u),
                },
            });
        };
        damping_history.push(lambda);
        iterations += 1;
        let hinted = AssemblyOptions {
            density_hint: Some(&eval.density),
            ..opts
        };
        eval = evaluate(model, grid, &next, &hinted).map_err(|e| classify(e, iterations, &next))?;
        u = next;
    }
}

/// `m = H^{-1}(x, D_x u, u_t)` at every node.
pub fn recover_m(model: &dyn Model, grid: &SpaceTimeGrid, u: &DiscreteField) -> Result<DiscreteField, AssemblyError> {
    if u.len() != grid.len() {
        return Err(GridError::FieldLength {
            got: u.len(),
            expected: grid.len(),
        }
        .into());
    }
    let values = (0..grid.len())
        .into_par_iter()
        .map(|node| {
            let (p, s) = gradient_at(grid, u, node);
            let x = grid.position(node);
            invert_h(model, &x, &p, s, None).map_err(|e| AssemblyError::Node {
                node,
                t: grid.time(node),
                x,
                p,
                s,
                source: e.into(),
            })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(DiscreteField::new(grid, values)?)
}

/// Nodal monitors `(min m, max m, max |Du|, min gap)`.
pub fn monitors(
    model: &dyn Model,
    grid: &SpaceTimeGrid,
    u: &DiscreteField,
    density: &[f64],
) -> Result<(f64, f64, f64, f64), ModelError> {
    let per_node = (0..grid.len())
        .into_par_iter()
        .map(|node| {
            let (p, s) = gradient_at(grid, u, node);
            let grad = (p.iter().map(|v| v * v).sum::<f64>() + s * s).sqrt();
            let gap = ellipticity_gap(model, &grid.position(node), &p, density[node])?;
            Ok((density[node], grad, gap))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(per_node.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::INFINITY),
        |(lo, hi, g, gap), &(m, gr, ga)| (lo.min(m), hi.max(m), g.max(gr), gap.min(ga)),
    ))
}

#[derive(Clone, Debug)]
pub struct ContinuationResult {
    pub u: DiscreteField,
    pub density: DiscreteField,
    pub trace: ContinuationTrace,
}

fn record(
    model: &dyn Model,
    grid: &SpaceTimeGrid,
    theta: f64,
    u: &DiscreteField,
    report: &NewtonReport,
) -> Result<ContinuationStep, SolverError> {
    let (min_m, max_m, max_grad, min_gap) = monitors(model, grid, u, &report.density)?;
    Ok(ContinuationStep {
        theta,
        iters: report.iterations,
        residual: report.residual(),
        min_m,
        max_m,
        max_grad,
        min_gap,
    })
}

/// Walk θ from 0 to 1, warm-starting Newton from the previous solution.
pub fn continuation_solve(
    model: &ModelRef,
    grid: &SpaceTimeGrid,
    cfg: &ContinuationConfig,
) -> Result<ContinuationResult, SolverError> {
    cfg.validate().map_err(SolverError::Config)?;
    if model.dim() != grid.dim() {
        return Err(GridError::Invalid(format!(
            "model dimension {} does not match grid dimension {}",
            model.dim(),
            grid.dim()
        ))
        .into());
    }
    let base_model = theta_model(model, 0.0);
    let (mut u, report) = newton_solve(base_model.as_ref(), grid, base_solution(model.as_ref(), grid), cfg)?;
    let mut trace = ContinuationTrace::default();
    trace.steps.push(record(base_model.as_ref(), grid, 0.0, &u, &report)?);
    let mut density = report.density;

    let mut theta = 0.0;
    let mut dtheta = cfg.dtheta_init;
    let mut successes = 0;
    let mut halvings = 0;
    while theta < 1.0 {
        let next = (theta + dtheta).min(1.0);
        let member = theta_model(model, next);
        match newton_solve(member.as_ref(), grid, u.clone(), cfg) {
            Ok((sol, report)) => {
                let step = record(member.as_ref(), grid, next, &sol, &report)?;
                log::info!(
                    "theta {next:.6}: {} iterations, residual {:e}, min gap {:e}",
                    step.iters,
                    step.residual,
                    step.min_gap
                );
                trace.steps.push(step);
                theta = next;
                u = sol;
                density = report.density;
                halvings = 0;
                successes += 1;
                if successes >= 2 {
                    dtheta = (2.0 * dtheta).min(cfg.dtheta_max);
                    successes = 0;
                }
            }
            Err(err @ (SolverError::Grid(_) | SolverError::Model(_) | SolverError::Config(_))) => return Err(err),
            Err(err) => {
                log::info!("theta {next:.6} rejected: {err}");
                successes = 0;
                if halvings >= cfg.max_halvings {
                    return Err(SolverError::Stall {
                        theta_star: theta,
                        dtheta,
                        cause: Box::new(err),
                        last_good: Box::new(u),
                        trace,
                    });
                }
                halvings += 1;
                dtheta *= 0.5;
            }
        }
    }
    Ok(ContinuationResult {
        density: DiscreteField::new(grid, density)?,
        u,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::residual;
    use crate::models::{CommonParams, Congestion, Sql};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn sql(kappa_v: f64, amplitude: f64) -> ModelRef {
        Arc::new(
            Sql::new(CommonParams {
                kappa_v,
                amplitude,
                ..CommonParams::default()
            })
            .unwrap(),
        )
    }

    #[test]
    fn theta_one_is_pass_through() {
        let model = sql(0.1, 0.2);
        let same = theta_model(&model, 1.0);
        assert!(Arc::ptr_eq(&model, &same));
    }

    #[test]
    fn theta_zero_freezes_x() {
        let model = sql(0.1, 0.2);
        let m0 = theta_model(&model, 0.0);
        let (x, p, m) = ([0.37], [0.8], 1.7f64);
        let expected = 0.5 * 0.64 + 0.1 - m.ln();
        assert!((m0.hamiltonian(&x, &p, m) - expected).abs() < 1e-14);
        assert!((m0.g_stack(&x, m).g - m).abs() < 1e-15);
        assert_eq!(m0.m0_stack(&x).m0, 1.0);
        assert_eq!(m0.h_stack(&x, &p, m).h_x[0], 0.0);
    }

    #[test]
    fn theta_half_initial_density() {
        let model = sql(0.1, 0.2);
        let half = theta_model(&model, 0.5);
        let n = 64;
        let mut mass = 0.0;
        for i in 0..n {
            let x = i as f64 / n as f64;
            let m0 = half.m0_stack(&[x]).m0;
            assert!((m0 - (1.0 + 0.1 * (2.0 * PI * x).cos())).abs() < 1e-14);
            mass += m0 / n as f64;
        }
        assert!((mass - 1.0).abs() < 1e-14);
    }

    #[test]
    fn base_solution_values() {
        let model = sql(0.1, 0.2);
        let grid = SpaceTimeGrid::new(1, 16, 16, 1.0).unwrap();
        let u = base_solution(model.as_ref(), &grid);
        for node in 0..grid.len() {
            assert!((u[node] - (0.1 * (grid.time(node) - 1.0) + 1.0)).abs() < 1e-15);
        }
        let cong: ModelRef = Arc::new(
            Congestion::new(
                CommonParams {
                    kappa_v: 0.0,
                    ..CommonParams::default()
                },
                1.0,
                1.0,
            )
            .unwrap(),
        );
        let u = base_solution(cong.as_ref(), &grid);
        assert!(u.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn base_solution_is_exact_and_newton_stops_immediately() {
        let model = sql(0.1, 0.2);
        let grid = SpaceTimeGrid::new(1, 32, 32, 1.0).unwrap();
        let base = theta_model(&model, 0.0);
        let u = base_solution(model.as_ref(), &grid);
        assert!(residual(base.as_ref(), &grid, &u).unwrap().max_abs() <= 1e-12);
        let (_, report) = newton_solve(base.as_ref(), &grid, u, &ContinuationConfig::default()).unwrap();
        assert!(report.iterations <= 1);
        assert!(report.residual() <= 1e-12);
        let m = recover_m(base.as_ref(), &grid, &base_solution(model.as_ref(), &grid)).unwrap();
        assert!(m.as_slice().iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn newton_converges_quadratically_to_zero() {
        let model = sql(0.0, 0.0);
        let grid = SpaceTimeGrid::new(1, 16, 16, 1.0).unwrap();
        let u0 = DiscreteField::from_fn(&grid, |_, x| 0.1 * (2.0 * PI * x[0]).cos());
        let (u, report) = newton_solve(model.as_ref(), &grid, u0, &ContinuationConfig::default()).unwrap();
        assert!(u.max_abs() < 1e-9, "{}", u.max_abs());
        let h = &report.residual_history;
        let tail: Vec<f64> = h.windows(2).filter(|w| w[0] < 1e-2).map(|w| w[1] / (w[0] * w[0])).collect();
        assert!(tail.iter().all(|r| *r < 1e3), "{h:?}");
    }

    #[test]
    fn inversion_failure_is_a_distinct_error() {
        let model = sql(0.0, 0.0);
        let grid = SpaceTimeGrid::new(1, 8, 8, 1.0).unwrap();
        let u0 = DiscreteField::from_fn(&grid, |t, _| 100.0 * t);
        let err = newton_solve(model.as_ref(), &grid, u0, &ContinuationConfig::default()).unwrap_err();
        assert!(matches!(err, SolverError::Inversion { .. }), "{err}");
        assert!(err.last_iterate().is_some());
    }

    #[test]
    fn continuation_reaches_one_with_giant_first_step() {
        let model = sql(0.1, 0.2);
        let grid = SpaceTimeGrid::new(1, 16, 16, 1.0).unwrap();
        let cfg = ContinuationConfig {
            dtheta_init: 1.0,
            dtheta_max: 1.0,
            ..ContinuationConfig::default()
        };
        let res = continuation_solve(&model, &grid, &cfg).unwrap();
        assert_eq!(res.trace.last_theta(), Some(1.0));
        assert!(res.trace.steps.windows(2).all(|w| w[0].theta < w[1].theta));
        assert!(res.trace.steps.iter().all(|s| s.min_m > 0.0));
        let json = res.trace.to_json();
        for key in ["theta", "iters", "residual", "min_m", "max_m", "max_grad", "min_gap"] {
            assert!(json.contains(&format!("\"{key}\"")));
        }
    }

    #[test]
    fn config_invariants() {
        assert!(ContinuationConfig::default().validate().is_ok());
        let bad = ContinuationConfig {
            dtheta_init: 0.5,
            ..ContinuationConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
