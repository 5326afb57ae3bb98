//! Nonlinear programming layer: the steering problem as an NLP, a sequential quadratic
//! programming solver with an augmented-Lagrangian fallback, and the Hohmann seed.

mod auglag;
mod hohmann;
mod problem;
pub mod qp;
mod sqp;

use std::time::Duration;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::policy::ControlPolicy;
use crate::steering::{ChanceConstraintParams, MomentTrajectory, SteeringProblem, TerminalSpec};

pub use hohmann::{hohmann_delta_v, hohmann_initial_guess};
pub use problem::{SteeringNlp, SteeringPoint};
pub use sqp::minimize;

/// A smooth NLP `min f(x)` subject to `c_eq(x) = 0`, `c_ineq(x) ≤ 0`.
///
/// Constraint vectors stack the equalities first.
pub trait Nlp: Sync {
    /// Whatever the evaluator wants to keep from an evaluation (e.g. node moments).
    type Cache: Send + Sync;

    fn dim(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    fn evaluate(&self, x: &DVector<f64>) -> Result<Point<Self::Cache>>;
    /// Constraint Jacobian at an already evaluated point.
    fn jacobian(&self, x: &DVector<f64>, at: &Point<Self::Cache>) -> Result<DMatrix<f64>>;

    /// Multiplier turning the solver objective back into reported cost units.
    fn cost_scale(&self) -> f64 {
        1.0
    }

    /// Switches to more accurate (and costlier) derivatives, if the evaluator has any.
    /// Returns false when nothing changed. Called when a search direction fails to
    /// decrease the merit function.
    fn refine_derivatives(&self) -> bool {
        false
    }

    /// Optional simple bounds on the variables.
    fn bounds(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct Point<C> {
    pub objective: f64,
    pub gradient: DVector<f64>,
    pub constraints: DVector<f64>,
    pub cache: C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Sqp,
    AugmentedLagrangian,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Max-norm tolerance on constraint violation.
    pub feasibility_tol: f64,
    /// Relative tolerance on the Lagrangian gradient.
    pub optimality_tol: f64,
    pub algorithm: Algorithm,
    /// Box bound on every gain entry; `None` leaves the gains free.
    pub gain_bound: Option<f64>,
    /// Restart Jacobian columns at their own node instead of the initial time.
    pub causal_jacobian: bool,
    /// Echo progress lines to stderr.
    pub verbose: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            feasibility_tol: 1e-6,
            optimality_tol: 1e-6,
            algorithm: Algorithm::Sqp,
            gain_bound: None,
            causal_jacobian: true,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    IterationLimit,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::IterationLimit => "iteration-limit",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    /// Objective in reported units (see [`Nlp::cost_scale`]).
    pub cost: f64,
    pub max_eq_violation: f64,
    pub max_ineq_violation: f64,
    pub stationarity: f64,
    pub jacobian_evaluations: usize,
    pub wall_time: Duration,
    /// Progress lines: iteration, cost, max violation, step length, stationarity, penalty.
    pub log: Vec<String>,
}

pub const LOG_HEADER: &str = "# iteration cost max_violation step_length stationarity penalty";

/// Outcome of a minimization: final point, its evaluation and the report.
pub struct Solution<C> {
    pub x: DVector<f64>,
    pub point: Point<C>,
    pub report: SolveReport,
}

pub(crate) fn split_violation(c: &DVector<f64>, n_eq: usize) -> (f64, f64) {
    let eq = c.rows(0, n_eq).amax();
    let ineq = c.rows(n_eq, c.len() - n_eq).iter().fold(0.0_f64, |m, v| m.max(*v));
    (if n_eq == 0 { 0.0 } else { eq }, ineq)
}

pub(crate) fn log_line(iter: usize, cost: f64, viol: f64, step: f64, stat: f64, penalty: f64) -> String {
    format!("{iter} {cost:.12e} {viol:.6e} {step:.6e} {stat:.6e} {penalty:.3e}")
}

/// Optimizes the policy of a steering problem from `guess`. The returned trajectory is a
/// fresh forward pass at the solution and the policy carries its reference means.
pub fn solve(
    problem: &SteeringProblem,
    chance: ChanceConstraintParams,
    terminal: TerminalSpec,
    guess: &ControlPolicy,
    config: &SolverConfig,
) -> Result<(ControlPolicy, MomentTrajectory, SolveReport)> {
    let nlp = SteeringNlp::new(problem, chance, terminal)?
        .with_gain_bound(config.gain_bound)
        .with_causal_jacobian(config.causal_jacobian);
    let x0 = nlp.pack(guess)?;
    let solution = minimize(&nlp, x0, config)?;
    let (policy, trajectory) = nlp.policy_at(&solution.x)?;
    Ok((policy, trajectory, solution.report))
}
