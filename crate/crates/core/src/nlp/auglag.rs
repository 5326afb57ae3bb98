//! Augmented-Lagrangian fallback: quasi-Newton minimization of the augmented Lagrangian
//! with first-order multiplier updates.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::sqp::Bfgs;
use super::{log_line, split_violation, Nlp, Point, Solution, SolveReport, SolveStatus, SolverConfig};
use crate::error::Result;

const MAX_INNER: usize = 40;

/// Finite simple bounds as rows `s (x_i − limit) ≤ 0`.
fn bound_rows(bounds: &Option<(DVector<f64>, DVector<f64>)>) -> Vec<(usize, f64, f64)> {
    let mut rows = Vec::new();
    if let Some((lo, hi)) = bounds {
        for i in 0..lo.len() {
            if hi[i].is_finite() {
                rows.push((i, 1.0, hi[i]));
            }
            if lo[i].is_finite() {
                rows.push((i, -1.0, lo[i]));
            }
        }
    }
    rows
}

struct Penalty<'a> {
    /// Constraint multipliers followed by bound-row multipliers.
    lambda: &'a DVector<f64>,
    rho: f64,
    n_eq: usize,
    bounds: &'a [(usize, f64, f64)],
}

impl Penalty<'_> {
    /// Constraint values with the bound rows appended.
    fn rows<C>(&self, p: &Point<C>, x: &DVector<f64>) -> DVector<f64> {
        let m = p.constraints.len();
        DVector::from_fn(m + self.bounds.len(), |i, _| {
            if i < m {
                p.constraints[i]
            } else {
                let (j, s, limit) = self.bounds[i - m];
                s * (x[j] - limit)
            }
        })
    }

    fn shifted(&self, c: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(c.len(), |i, _| {
            let s = self.lambda[i] + self.rho * c[i];
            if i < self.n_eq {
                s
            } else {
                s.max(0.0)
            }
        })
    }

    fn value<C>(&self, p: &Point<C>, x: &DVector<f64>) -> f64 {
        let mut v = p.objective;
        for (i, &c) in self.rows(p, x).iter().enumerate() {
            let l = self.lambda[i];
            if i < self.n_eq {
                v += l * c + 0.5 * self.rho * c * c;
            } else {
                let s = (l + self.rho * c).max(0.0);
                v += (s * s - l * l) / (2.0 * self.rho);
            }
        }
        v
    }

    /// Lagrangian gradient for the multipliers `y` (constraints then bound rows).
    fn lagrangian_gradient<C>(&self, p: &Point<C>, jac: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
        let m = p.constraints.len();
        let mut g = &p.gradient + jac.transpose() * y.rows(0, m);
        for (r, &(j, s, _)) in self.bounds.iter().enumerate() {
            g[j] += s * y[m + r];
        }
        g
    }

    fn gradient<C>(&self, p: &Point<C>, jac: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
        self.lagrangian_gradient(p, jac, &self.shifted(&self.rows(p, x)))
    }
}

pub(crate) fn solve<P: Nlp>(nlp: &P, x0: DVector<f64>, config: &SolverConfig) -> Result<Solution<P::Cache>> {
    let started = Instant::now();
    let n = nlp.dim();
    let n_eq = nlp.n_eq();
    let bounds = bound_rows(&nlp.bounds());
    let scale = nlp.cost_scale();
    let mut log = Vec::new();

    let mut x = x0;
    let mut point = nlp.evaluate(&x)?;
    let mut lambda = DVector::zeros(point.constraints.len() + bounds.len());
    let mut rho = 10.0;
    let mut jacobians = 0;
    let status;
    let mut stationarity = f64::INFINITY;
    let mut last_step = 0.0;
    let mut prev_viol = f64::INFINITY;
    let mut inner_tol = 1e-2;

    'outer: loop {
        let mut bfgs = Bfgs::new(n, 2.0);
        let mut previous: Option<(DVector<f64>, DVector<f64>)> = None;
        let mut jac;
        for _ in 0..MAX_INNER {
            jac = match nlp.jacobian(&x, &point) {
                Ok(j) => j,
                Err(_) => {
                    status = SolveStatus::Infeasible;
                    break 'outer;
                }
            };
            jacobians += 1;
            let pen = Penalty { lambda: &lambda, rho, n_eq, bounds: &bounds };
            let grad = pen.gradient(&point, &jac, &x);
            if let Some((s, g_old)) = previous.take() {
                bfgs.update(&s, &(&grad - g_old));
            }
            let rows = pen.rows(&point, &x);
            let (eq, ineq) = split_violation(&rows, n_eq);
            let viol = eq.max(ineq);
            let multipliers = pen.shifted(&rows);
            stationarity = pen.lagrangian_gradient(&point, &jac, &multipliers).amax() / (1.0 + point.gradient.amax());
            let line = log_line(jacobians - 1, point.objective * scale, viol, last_step, stationarity, rho);
            if config.verbose {
                eprintln!("{line}");
            }
            log.push(line);
            if viol <= config.feasibility_tol && stationarity <= config.optimality_tol {
                status = SolveStatus::Converged;
                break 'outer;
            }
            if jacobians > config.max_iterations {
                status = SolveStatus::IterationLimit;
                break 'outer;
            }
            if grad.amax() <= inner_tol * (1.0 + point.gradient.amax()) {
                break;
            }
            let mut d = -(&bfgs.h * &grad);
            let mut slope = grad.dot(&d);
            if slope >= 0.0 {
                bfgs.reset();
                d = -&grad / 2.0;
                slope = grad.dot(&d);
            }
            let f0 = pen.value(&point, &x);
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let xt = &x + &d * alpha;
                if let Ok(pt) = nlp.evaluate(&xt) {
                    if pen.value(&pt, &xt) <= f0 + 1e-4 * alpha * slope {
                        accepted = Some((xt, pt));
                        break;
                    }
                    alpha *= 0.5;
                } else {
                    alpha *= 0.1;
                }
            }
            match accepted {
                Some((xt, pt)) => {
                    previous = Some((&xt - &x, grad));
                    x = xt;
                    point = pt;
                    last_step = alpha;
                }
                None => break,
            }
        }
        let pen = Penalty { lambda: &lambda, rho, n_eq, bounds: &bounds };
        let rows = pen.rows(&point, &x);
        lambda = pen.shifted(&rows);
        let (eq, ineq) = split_violation(&rows, n_eq);
        let viol = eq.max(ineq);
        if viol > 0.25 * prev_viol {
            rho = (rho * 10.0).min(1e12);
        }
        prev_viol = viol;
        inner_tol = (inner_tol * 0.1).max(0.1 * config.optimality_tol);
    }

    let (eq, ineq) = split_violation(&point.constraints, n_eq);
    let report = SolveReport {
        status,
        iterations: jacobians,
        cost: point.objective * scale,
        max_eq_violation: eq,
        max_ineq_violation: ineq,
        stationarity,
        jacobian_evaluations: jacobians,
        wall_time: started.elapsed(),
        log,
    };
    Ok(Solution { x, point, report })
}

#[cfg(test)]
mod tests {
    use nalgebra::DVector;

    use super::super::sqp::tests::{circle, halfplane, rosenbrock_disk};
    use super::super::{minimize, Algorithm, SolveStatus, SolverConfig};

    fn config() -> SolverConfig {
        SolverConfig {
            algorithm: Algorithm::AugmentedLagrangian,
            feasibility_tol: 1e-8,
            optimality_tol: 1e-6,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn solves_equality_toy() {
        let sol = minimize(&circle(), DVector::from_vec(vec![0.5, -1.5]), &config()).unwrap();
        assert_eq!(sol.report.status, SolveStatus::Converged);
        assert!((sol.x[0] + 1.0).abs() < 1e-5 && (sol.x[1] + 1.0).abs() < 1e-5, "{}", sol.x);
    }

    #[test]
    fn solves_inequality_toy() {
        let sol = minimize(&halfplane(), DVector::from_vec(vec![3.0, -2.0]), &config()).unwrap();
        assert_eq!(sol.report.status, SolveStatus::Converged);
        assert!((sol.x[0] - 0.5).abs() < 1e-5 && (sol.x[1] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn agrees_with_sqp_on_bounded_problem() {
        let al = minimize(&rosenbrock_disk(), DVector::from_vec(vec![-1.0, 0.5]), &config()).unwrap();
        let sqp = minimize(&rosenbrock_disk(), DVector::from_vec(vec![-1.0, 0.5]), &SolverConfig::default()).unwrap();
        assert_eq!(al.report.status, SolveStatus::Converged);
        assert!((&al.x - &sqp.x).amax() < 1e-4, "{} vs {}", al.x, sqp.x);
    }
}
