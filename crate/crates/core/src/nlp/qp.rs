//! Elastic (ℓ1-penalized) quadratic subproblems solved through their bounded dual.
//!
//! The primal subproblem
//!
//! ```text
//!   min  gᵀd + ½ dᵀBd + ν Σ_eq |c_i + a_iᵀd| + ν Σ_ineq max(0, c_i + a_iᵀd)
//! ```
//!
//! has the dual `min ½ λᵀMλ + qᵀλ` with `M = A B⁻¹ Aᵀ`, `q = A B⁻¹ g − c`,
//! `|λ_eq| ≤ ν`, `0 ≤ λ_ineq ≤ ν`, and primal recovery `d = −B⁻¹(g + Aᵀλ)`.
//! The box-constrained dual is solved by a primal active-set method.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub step: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub iterations: usize,
}

/// Box-constrained convex QP `min ½xᵀMx + qᵀx, lo ≤ x ≤ hi` by an active-set method.
/// `lo ≤ 0 ≤ hi` componentwise is required (the origin starts feasible).
pub fn box_qp(m: &DMatrix<f64>, q: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> (DVector<f64>, usize) {
    let n = q.len();
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let reg = 1e-12 * scale;
    let mut x = DVector::zeros(n);
    // 0: free, -1: at lower bound, +1: at upper bound
    let mut state = vec![0i8; n];
    let max_iter = 50 * (n + 1);
    for iter in 0..max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        // Minimizer over the free variables with the bound variables fixed.
        let mut target = x.clone();
        if !free.is_empty() {
            let k = free.len();
            let mut mff = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (a, &i) in free.iter().enumerate() {
                let mut r = -q[i];
                for j in 0..n {
                    if state[j] != 0 {
                        r -= m[(i, j)] * x[j];
                    }
                }
                rhs[a] = r;
                for (b, &j) in free.iter().enumerate() {
                    mff[(a, b)] = m[(i, j)];
                }
                mff[(a, a)] += reg;
            }
            let sol = solve_refined(mff, reg, &rhs);
            for (a, &i) in free.iter().enumerate() {
                target[i] = sol[a];
            }
        }
        // Walk toward the target until a bound blocks.
        let mut alpha = 1.0;
        let mut blocking = None;
        for &i in &free {
            let d = target[i] - x[i];
            if d > 0.0 && target[i] > hi[i] {
                let a = (hi[i] - x[i]) / d;
                if a < alpha {
                    alpha = a;
                    blocking = Some((i, 1i8));
                }
            } else if d < 0.0 && target[i] < lo[i] {
                let a = (lo[i] - x[i]) / d;
                if a < alpha {
                    alpha = a;
                    blocking = Some((i, -1i8));
                }
            }
        }
        for &i in &free {
            x[i] += alpha.max(0.0) * (target[i] - x[i]);
        }
        if let Some((i, side)) = blocking {
            x[i] = if side > 0 { hi[i] } else { lo[i] };
            state[i] = side;
            continue;
        }
        // Free subproblem solved; release the bound with the most negative multiplier.
        let grad = m * &x + q;
        let mut release = None;
        let mut worst = 1e-12 * (1.0 + grad.amax());
        for i in 0..n {
            let wrong = match state[i] {
                -1 => -grad[i],
                1 => grad[i],
                _ => 0.0,
            };
            if wrong > worst {
                worst = wrong;
                release = Some(i);
            }
        }
        match release {
            Some(i) => state[i] = 0,
            None => return (x, iter + 1),
        }
    }
    (x, max_iter)
}

/// Solves `(M + reg I) x = r` and refines the answer against `M` itself, so the
/// regularization only matters when `M` is numerically singular.
fn solve_refined(mut shifted: DMatrix<f64>, reg: f64, rhs: &DVector<f64>) -> DVector<f64> {
    let k = rhs.len();
    let original = {
        let mut m = shifted.clone();
        for a in 0..k {
            m[(a, a)] -= reg;
        }
        m
    };
    let solve = |r: &DVector<f64>, m: &DMatrix<f64>| -> Option<DVector<f64>> {
        match m.clone().cholesky() {
            Some(ch) => Some(ch.solve(r)),
            None => m.clone().lu().solve(r),
        }
    };
    let mut x = match solve(rhs, &shifted) {
        Some(x) => x,
        None => {
            for a in 0..k {
                shifted[(a, a)] += 1e3 * reg;
            }
            solve(rhs, &shifted).unwrap_or_else(|| DVector::zeros(k))
        }
    };
    for _ in 0..3 {
        let residual = rhs - &original * &x;
        match solve(&residual, &shifted) {
            Some(dx) if dx.iter().all(|v| v.is_finite()) => x += dx,
            _ => break,
        }
    }
    x
}

/// Solves the elastic subproblem given `B⁻¹` (`hinv`), gradient `g`, constraint
/// Jacobian `a` (rows: `n_eq` equalities then inequalities), values `c`, penalty `nu`.
pub fn elastic_qp(
    hinv: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    n_eq: usize,
    nu: f64,
) -> QpSolution {
    let rows = c.len();
    if rows == 0 {
        return QpSolution { step: -(hinv * g), multipliers: DVector::zeros(0), iterations: 0 };
    }
    let hat = hinv * a.transpose();
    let m = a * &hat;
    // Equilibrate the dual to a unit diagonal: λ = D μ with D = diag(M)^{-1/2}.
    let d = DVector::from_fn(rows, |i, _| if m[(i, i)] > 0.0 { 1.0 / m[(i, i)].sqrt() } else { 1.0 });
    let m = DMatrix::from_fn(rows, rows, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]) * d[i] * d[j]);
    let q = (hat.transpose() * g - c).component_mul(&d);
    let lo = DVector::from_fn(rows, |i, _| if i < n_eq { -nu / d[i] } else { 0.0 });
    let hi = DVector::from_fn(rows, |i, _| nu / d[i]);
    let (mu, iterations) = box_qp(&m, &q, &lo, &hi);
    let lambda = mu.component_mul(&d);
    let step = -(hinv * g + &hat * &lambda);
    QpSolution { step, multipliers: lambda, iterations }
}

/// ℓ1 infeasibility `Σ|c_eq| + Σ max(0, c_ineq)`.
pub fn l1_violation(c: &DVector<f64>, n_eq: usize) -> f64 {
    c.iter().enumerate().map(|(i, v)| if i < n_eq { v.abs() } else { v.max(0.0) }).sum()
}

/// Max-norm infeasibility.
pub fn max_violation(c: &DVector<f64>, n_eq: usize) -> f64 {
    c.iter().enumerate().map(|(i, v)| if i < n_eq { v.abs() } else { v.max(0.0) }).fold(0.0, f64::max)
}
