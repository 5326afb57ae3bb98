//! Adaptive Dormand–Prince 5(4) integrator over fixed-size states.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { abs: 1e-12, rel: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OdeStats {
    pub steps: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// Largest normalized error estimate among accepted steps (≤ 1 by construction).
    pub max_error: f64,
}

const MAX_STEPS: usize = 200_000;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Fifth minus fourth order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn combine<const D: usize>(y: &[f64; D], h: f64, terms: &[(f64, &[f64; D])]) -> [f64; D] {
    let mut out = *y;
    for (c, k) in terms {
        let hc = h * c;
        for i in 0..D {
            out[i] += hc * k[i];
        }
    }
    out
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction).
pub fn integrate<const D: usize, F>(
    mut f: F,
    t0: f64,
    y0: [f64; D],
    t1: f64,
    tol: Tolerances,
) -> Result<([f64; D], OdeStats)>
where
    F: FnMut(f64, &[f64; D]) -> Result<[f64; D]>,
{
    let mut stats = OdeStats::default();
    if t1 == t0 {
        return Ok((y0, stats));
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let err_norm = |y: &[f64; D], yn: &[f64; D], e: &[f64; D]| -> f64 {
        let mut acc = 0.0;
        for i in 0..D {
            let sc = tol.abs + tol.rel * y[i].abs().max(yn[i].abs());
            let r = e[i] / sc;
            acc += r * r;
        }
        (acc / D as f64).sqrt()
    };

    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y)?;
    stats.evaluations += 1;

    // Initial step following Hairer, Nørsett & Wanner.
    let mut h = {
        let zeros = [0.0; D];
        let d0 = err_norm(&y, &y, &y);
        let d1 = err_norm(&y, &y, &k1);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        let y1 = combine(&y, dir * h0, &[(1.0, &k1)]);
        let k2 = f(t + dir * h0, &y1)?;
        stats.evaluations += 1;
        let mut diff = zeros;
        for i in 0..D {
            diff[i] = (k2[i] - k1[i]) / h0;
        }
        let d2 = err_norm(&y, &y, &diff);
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(1.0 / 5.0) };
        (100.0 * h0).min(h1).min(span)
    };

    let h_min = 1e-14 * t0.abs().max(t1.abs()).max(1.0);
    loop {
        if stats.steps + stats.rejected > MAX_STEPS {
            return Err(Error::TooManySteps(MAX_STEPS));
        }
        let remaining = (t1 - t) * dir;
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = dir * h;
        let k2 = f(t + C2 * hs, &combine(&y, hs, &[(A21, &k1)]))?;
        let k3 = f(t + C3 * hs, &combine(&y, hs, &[(A31, &k1), (A32, &k2)]))?;
        let k4 = f(t + C4 * hs, &combine(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
        let k5 = f(t + C5 * hs, &combine(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?;
        let k6 = f(t + hs, &combine(&y, hs, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]))?;
        let y_new = combine(&y, hs, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
        let k7 = f(t + hs, &y_new)?;
        stats.evaluations += 6;

        let mut e = [0.0; D];
        for i in 0..D {
            e[i] = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let err = err_norm(&y, &y_new, &e);
        if err <= 1.0 {
            t = if last { t1 } else { t + hs };
            y = y_new;
            k1 = k7;
            stats.steps += 1;
            stats.max_error = stats.max_error.max(err);
            if last {
                return Ok((y, stats));
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
        }
        if h < h_min {
            return Err(Error::StepUnderflow { t });
        }
    }
}
