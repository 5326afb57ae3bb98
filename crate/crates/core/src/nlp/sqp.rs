//! Sℓ1QP: line-search SQP on the exact ℓ1 merit with a damped BFGS Hessian.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::qp::{elastic_qp, l1_violation, QpSolution};
use super::{
    auglag, log_line, split_violation, Algorithm, Nlp, Point, Solution, SolveReport, SolveStatus, SolverConfig,
};
use crate::error::Result;

const ARMIJO: f64 = 1e-4;
const MAX_LINE_SEARCH: usize = 25;
const PENALTY_MAX: f64 = 1e10;
/// Bounds are only linearized once the variable is within this fraction of them.
const BOUND_ACTIVATION: f64 = 0.5;

/// Minimizes `nlp` from `x0` with the algorithm selected in `config`.
///
/// Errors only if the starting point cannot be evaluated; numerical trouble later on is
/// reported through [`SolveStatus`].
pub fn minimize<P: Nlp>(nlp: &P, x0: DVector<f64>, config: &SolverConfig) -> Result<Solution<P::Cache>> {
    match config.algorithm {
        Algorithm::Sqp => sqp(nlp, x0, config),
        Algorithm::AugmentedLagrangian => auglag::solve(nlp, x0, config),
    }
}

/// Linearization of the simple bounds near `x`, as extra inequality rows `a d + c ≤ 0`.
pub(crate) struct BoundRows {
    index: Vec<(usize, f64)>,
}

impl BoundRows {
    pub(crate) fn near(bounds: &Option<(DVector<f64>, DVector<f64>)>, x: &DVector<f64>) -> Self {
        let mut index = Vec::new();
        if let Some((lo, hi)) = bounds {
            for i in 0..x.len() {
                if hi[i].is_finite() && x[i] > hi[i] - BOUND_ACTIVATION * hi[i].abs().max(1e-12) {
                    index.push((i, 1.0));
                }
                if lo[i].is_finite() && x[i] < lo[i] + BOUND_ACTIVATION * lo[i].abs().max(1e-12) {
                    index.push((i, -1.0));
                }
            }
        }
        Self { index }
    }

    fn len(&self) -> usize {
        self.index.len()
    }

    fn values(&self, bounds: &Option<(DVector<f64>, DVector<f64>)>, x: &DVector<f64>) -> DVector<f64> {
        let (lo, hi) = bounds.as_ref().expect("bound rows without bounds");
        DVector::from_iterator(
            self.len(),
            self.index.iter().map(|&(i, s)| if s > 0.0 { x[i] - hi[i] } else { lo[i] - x[i] }),
        )
    }

    fn rows(&self, n: usize) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.len(), n);
        for (r, &(i, s)) in self.index.iter().enumerate() {
            a[(r, i)] = s;
        }
        a
    }
}

/// Total ℓ1 violation of the simple bounds.
pub(crate) fn bound_violation(bounds: &Option<(DVector<f64>, DVector<f64>)>, x: &DVector<f64>) -> f64 {
    match bounds {
        None => 0.0,
        Some((lo, hi)) => (0..x.len()).map(|i| (x[i] - hi[i]).max(0.0) + (lo[i] - x[i]).max(0.0)).sum(),
    }
}

fn stack_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if b.nrows() == 0 {
        return a.clone();
    }
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

fn stack_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Damped BFGS pair `(B, B⁻¹)`.
pub(crate) struct Bfgs {
    pub b: DMatrix<f64>,
    pub h: DMatrix<f64>,
    initial: f64,
}

impl Bfgs {
    pub(crate) fn new(n: usize, initial: f64) -> Self {
        Self { b: DMatrix::identity(n, n) * initial, h: DMatrix::identity(n, n) / initial, initial }
    }

    pub(crate) fn reset(&mut self) {
        let n = self.b.nrows();
        *self = Self::new(n, self.initial);
    }

    /// Powell-damped update; returns false if the pair was skipped.
    pub(crate) fn update(&mut self, s: &DVector<f64>, y: &DVector<f64>) -> bool {
        let bs = &self.b * s;
        let sbs = s.dot(&bs);
        if !(sbs > 1e-300) || !y.iter().all(|v| v.is_finite()) {
            return false;
        }
        let sy = s.dot(y);
        let y = if sy < 0.2 * sbs {
            let theta = 0.8 * sbs / (sbs - sy);
            y * theta + &bs * (1.0 - theta)
        } else {
            y.clone()
        };
        let sy = s.dot(&y);
        self.b -= &bs * bs.transpose() / sbs;
        self.b += &y * y.transpose() / sy;
        let b = (&self.b + self.b.transpose()) * 0.5;
        match b.clone().cholesky() {
            Some(ch) => {
                self.b = b;
                self.h = ch.inverse();
                true
            }
            None => {
                self.reset();
                false
            }
        }
    }
}

/// Quadratic model `B + μI` used by the subproblem. The shift grows when the line search
/// has to cut the step hard and decays after full steps, which bends the step away from
/// directions where the quasi-Newton curvature is too optimistic.
struct Model {
    mu: f64,
    b: DMatrix<f64>,
    h: DMatrix<f64>,
}

impl Model {
    fn refresh(&mut self, bfgs: &Bfgs) {
        if self.mu == 0.0 {
            self.b.clone_from(&bfgs.b);
            self.h.clone_from(&bfgs.h);
            return;
        }
        let n = bfgs.b.nrows();
        let shifted = &bfgs.b + DMatrix::identity(n, n) * self.mu;
        // B is positive definite, so the shifted matrix always factors.
        let h = shifted.clone().cholesky().expect("shifted BFGS matrix is positive definite").inverse();
        self.b = shifted;
        self.h = h;
    }

    /// Adapts the shift to the accepted step length and to `ratio`, the actual over the
    /// predicted merit reduction of that step.
    fn adapt(&mut self, alpha: f64, ratio: f64, bfgs: &Bfgs) {
        let n = bfgs.b.nrows() as f64;
        let floor = 1e-3 * bfgs.b.trace() / n;
        if alpha < 0.1 {
            self.mu = (10.0 * self.mu).max(floor);
        } else if alpha >= 1.0 && ratio > 0.75 {
            self.mu *= 0.5;
            if self.mu < floor {
                self.mu = 0.0;
            }
        }
    }
}

struct Iterate<C> {
    x: DVector<f64>,
    point: Point<C>,
    jac: DMatrix<f64>,
}

fn merit<C>(
    p: &Point<C>,
    n_eq: usize,
    nu: f64,
    bounds: &Option<(DVector<f64>, DVector<f64>)>,
    x: &DVector<f64>,
) -> f64 {
    p.objective + nu * (l1_violation(&p.constraints, n_eq) + bound_violation(bounds, x))
}

fn sqp<P: Nlp>(nlp: &P, x0: DVector<f64>, config: &SolverConfig) -> Result<Solution<P::Cache>> {
    let started = Instant::now();
    let n = nlp.dim();
    let n_eq = nlp.n_eq();
    let bounds = nlp.bounds();
    let scale = nlp.cost_scale();
    let mut log = Vec::new();
    let emit = |log: &mut Vec<String>, line: String| {
        if config.verbose {
            eprintln!("{line}");
        }
        log.push(line);
    };

    let point = nlp.evaluate(&x0)?;
    let mut jacobians = 0;
    let mut it = Iterate { jac: DMatrix::zeros(0, n), x: x0, point };
    let mut need_jacobian = true;
    let mut bfgs = Bfgs::new(n, 2.0);
    let mut model = Model { mu: 0.0, b: bfgs.b.clone(), h: bfgs.h.clone() };
    let mut nu = 1.0_f64;
    let mut lambda = DVector::zeros(it.point.constraints.len());
    let mut previous: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut last_step = 0.0;
    let mut failures = 0;
    let mut stationarity = f64::INFINITY;
    let status;
    let mut iterations = 0;

    loop {
        if need_jacobian {
            match nlp.jacobian(&it.x, &it.point) {
                Ok(j) => it.jac = j,
                Err(_) => {
                    status = SolveStatus::Infeasible;
                    break;
                }
            }
            jacobians += 1;
            need_jacobian = false;
            // BFGS pair built with the newest multipliers on both ends.
            if let Some((s, grad_lag_old)) = previous.take() {
                let grad_lag_new = &it.point.gradient + it.jac.transpose() * &lambda;
                bfgs.update(&s, &(grad_lag_new - grad_lag_old));
            }
        }
        model.refresh(&bfgs);

        let rows = BoundRows::near(&bounds, &it.x);
        let a = stack_rows(&it.jac, &rows.rows(n));
        let c = if rows.len() > 0 {
            stack_vec(&it.point.constraints, &rows.values(&bounds, &it.x))
        } else {
            it.point.constraints.clone()
        };
        let qp = penalized_qp(&model.h, &it.point.gradient, &a, &c, n_eq, &mut nu);
        let grad_lag = &it.point.gradient + a.transpose() * &qp.multipliers;
        stationarity = grad_lag.amax() / (1.0 + it.point.gradient.amax());
        let (eq, ineq) = split_violation(&it.point.constraints, n_eq);
        let viol = eq.max(ineq).max(bound_violation(&bounds, &it.x));

        emit(&mut log, log_line(iterations, it.point.objective * scale, viol, last_step, stationarity, nu));

        let d = &qp.step;
        let small_step = d.amax() <= 1e-12 * (1.0 + it.x.amax());
        if viol <= config.feasibility_tol && (stationarity <= config.optimality_tol || small_step) {
            status = SolveStatus::Converged;
            break;
        }
        if iterations >= config.max_iterations {
            status = SolveStatus::IterationLimit;
            break;
        }
        iterations += 1;

        let bd = &model.b * d;
        let lin = &c + &a * d;
        let pred =
            -it.point.gradient.dot(d) - 0.5 * d.dot(&bd) + nu * (l1_violation(&c, n_eq) - l1_violation(&lin, n_eq));
        let phi0 = merit(&it.point, n_eq, nu, &bounds, &it.x);
        let ls = line_search(nlp, &it, d, &a, &model.h, n_eq, nu, phi0, pred.max(0.0), &bounds);
        match ls {
            Some((x_new, p_new, alpha)) => {
                let ratio = (phi0 - merit(&p_new, n_eq, nu, &bounds, &x_new)) / (alpha * pred).max(f64::MIN_POSITIVE);
                failures = 0;
                let s = &x_new - &it.x;
                lambda = qp.multipliers.rows(0, it.point.constraints.len()).into_owned();
                let grad_lag_old = &it.point.gradient + it.jac.transpose() * &lambda;
                previous = Some((s, grad_lag_old));
                it.x = x_new;
                it.point = p_new;
                need_jacobian = true;
                last_step = alpha;
                model.adapt(alpha, ratio, &bfgs);
            }
            None if nlp.refine_derivatives() => {
                // Retry from the same point with the better Jacobian.
                need_jacobian = true;
                last_step = 0.0;
            }
            None => {
                failures += 1;
                last_step = 0.0;
                if failures >= 2 {
                    // No merit decrease along two fresh directions: stuck, and only
                    // called infeasible when the constraints are violated.
                    status = if viol <= config.feasibility_tol {
                        SolveStatus::IterationLimit
                    } else {
                        SolveStatus::Infeasible
                    };
                    break;
                }
                bfgs.reset();
                model.mu = 0.0;
                model.refresh(&bfgs);
            }
        }
    }

    let (eq, ineq) = split_violation(&it.point.constraints, n_eq);
    let report = SolveReport {
        status,
        iterations,
        cost: it.point.objective * scale,
        max_eq_violation: eq,
        max_ineq_violation: ineq,
        stationarity,
        jacobian_evaluations: jacobians,
        wall_time: started.elapsed(),
        log,
    };
    Ok(Solution { x: it.x, point: it.point, report })
}

/// Solves the elastic QP, raising the penalty while the multipliers saturate and the
/// linearization is still violated.
fn penalized_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    n_eq: usize,
    nu: &mut f64,
) -> QpSolution {
    loop {
        let sol = elastic_qp(h, g, a, c, n_eq, *nu);
        let saturated = sol.multipliers.amax() >= 0.999 * *nu;
        let lin = c + a * &sol.step;
        let residual = l1_violation(&lin, n_eq);
        if saturated && residual > 1e-12 * (1.0 + c.amax()) && *nu < PENALTY_MAX {
            *nu *= 10.0;
            continue;
        }
        if sol.multipliers.amax() > 0.5 * *nu && *nu < PENALTY_MAX {
            // Keep the penalty comfortably above the multipliers for merit descent.
            *nu *= 10.0;
            continue;
        }
        return sol;
    }
}

#[allow(clippy::too_many_arguments)]
fn line_search<P: Nlp>(
    nlp: &P,
    it: &Iterate<P::Cache>,
    d: &DVector<f64>,
    a: &DMatrix<f64>,
    h: &DMatrix<f64>,
    n_eq: usize,
    nu: f64,
    phi0: f64,
    pred: f64,
    bounds: &Option<(DVector<f64>, DVector<f64>)>,
) -> Option<(DVector<f64>, Point<P::Cache>, f64)> {
    let mut alpha = 1.0;
    for trial in 0..MAX_LINE_SEARCH {
        let xt = &it.x + d * alpha;
        match nlp.evaluate(&xt) {
            Ok(pt) => {
                let phi = merit(&pt, n_eq, nu, bounds, &xt);
                if phi <= phi0 - ARMIJO * alpha * pred {
                    return Some((xt, pt, alpha));
                }
                if trial == 0 {
                    if let Some(found) = second_order_correction(nlp, it, d, &pt, a, h, n_eq, nu, phi0, pred, bounds) {
                        return Some(found);
                    }
                }
                // Quadratic model of the merit along d with slope −pred.
                let curvature = phi - phi0 + pred * alpha;
                let next = if curvature > 0.0 { pred * alpha * alpha / (2.0 * curvature) } else { 0.5 * alpha };
                alpha = next.clamp(0.1 * alpha, 0.5 * alpha);
            }
            Err(_) => alpha *= 0.1,
        }
        if alpha * d.amax() < 1e-16 * (1.0 + it.x.amax()) {
            break;
        }
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn second_order_correction<P: Nlp>(
    nlp: &P,
    it: &Iterate<P::Cache>,
    d: &DVector<f64>,
    trial: &Point<P::Cache>,
    a: &DMatrix<f64>,
    h: &DMatrix<f64>,
    n_eq: usize,
    nu: f64,
    phi0: f64,
    pred: f64,
    bounds: &Option<(DVector<f64>, DVector<f64>)>,
) -> Option<(DVector<f64>, Point<P::Cache>, f64)> {
    let m = trial.constraints.len();
    // Constant term chosen so the linearization reproduces c(x + d) at d; bound rows stay linear.
    let c_soc = &trial.constraints - a.rows(0, m) * d;
    let a_nl = a.rows(0, m).into_owned();
    let sol = elastic_qp(h, &it.point.gradient, &a_nl, &c_soc, n_eq, nu);
    let xs = &it.x + &sol.step;
    let pt = nlp.evaluate(&xs).ok()?;
    let phi = merit(&pt, n_eq, nu, bounds, &xs);
    (phi <= phi0 - ARMIJO * pred).then_some((xs, pt, 1.0))
}
