//! Browser bindings for a few interactive views of the library: the splitting library
//! against the standard normal, a planar Gaussian split into components, and one
//! propagation segment compared with Monte Carlo samples.
//!
//! Every binding returns a flat `Float64Array`; the layout is documented on each
//! function and mirrored in `www/index.html`.

use gmsteer::dynamics::DynamicsModel;
use gmsteer::montecarlo::{self, McConfig};
use gmsteer::steering::{propagate_split, ExecutionErrorModel, NodeSchedule, SteeringProblem};
use gmsteer::units::Units;
use gmsteer::{split_gaussian, ControlPolicy, Gaussian, SplitLibrary};
use nalgebra::{DMatrix, DVector};
use wasm_bindgen::prelude::*;

/// Squared radius of the 99.75% ellipse of a planar Gaussian, `-2 ln(0.0025)`.
const ELLIPSE_R2: f64 = 11.982929094215963;
const ELLIPSE_POINTS: usize = 64;

/// `[x, y]` pairs on the 99.75% ellipse of a 2×2 covariance.
fn ellipse(cx: f64, cy: f64, cov: &DMatrix<f64>) -> Vec<f64> {
    let eig = cov.clone().symmetric_eigen();
    let r = ELLIPSE_R2.sqrt();
    let mut out = Vec::with_capacity(2 * (ELLIPSE_POINTS + 1));
    for i in 0..=ELLIPSE_POINTS {
        let th = 2.0 * std::f64::consts::PI * i as f64 / ELLIPSE_POINTS as f64;
        let (a, b) = (eig.eigenvalues[0].max(0.0).sqrt() * th.cos(), eig.eigenvalues[1].max(0.0).sqrt() * th.sin());
        out.push(cx + r * (eig.eigenvectors[(0, 0)] * a + eig.eigenvectors[(0, 1)] * b));
        out.push(cy + r * (eig.eigenvectors[(1, 0)] * a + eig.eigenvectors[(1, 1)] * b));
    }
    out
}

/// Library density and the standard normal on `points` abscissae over `[-4, 4]`.
///
/// Layout: `[sigma, L, w_1..w_L, mu_1..mu_L, then (x, library pdf, normal pdf) per point]`.
pub fn library_curve_values(count: usize, penalty: f64, points: usize) -> Result<Vec<f64>, String> {
    let lib = SplitLibrary::load_or_generate(count, penalty, None).map_err(|e| e.to_string())?;
    let mut out = vec![lib.sigma(), count as f64];
    out.extend_from_slice(lib.weights());
    out.extend_from_slice(lib.means());
    let points = points.max(2);
    for i in 0..points {
        let x = -4.0 + 8.0 * i as f64 / (points - 1) as f64;
        out.extend([x, lib.pdf(x), (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()]);
    }
    Ok(out)
}

/// Splits a zero-mean planar Gaussian along the square-root columns selected by
/// `split_x`/`split_y` with the three-component library.
///
/// Layout: `[components, points per ellipse, then per component (weight, cx, cy, ellipse
/// x/y pairs)], then the original ellipse pairs`.
pub fn split_ellipse_values(sxx: f64, sxy: f64, syy: f64, split_x: bool, split_y: bool) -> Result<Vec<f64>, String> {
    let cov = DMatrix::from_row_slice(2, 2, &[sxx, sxy, sxy, syy]);
    let g = Gaussian::new(DVector::zeros(2), cov.clone()).map_err(|e| e.to_string())?;
    let dims: Vec<usize> = [(0, split_x), (1, split_y)].iter().filter(|(_, on)| *on).map(|(d, _)| *d).collect();
    let mix = split_gaussian(&g, &dims, &SplitLibrary::table_l3()).map_err(|e| e.to_string())?;
    let mut out = vec![mix.len() as f64, (ELLIPSE_POINTS + 1) as f64];
    for c in mix.components() {
        let m = c.gaussian.mean();
        out.extend([c.weight, m[0], m[1]]);
        out.extend(ellipse(m[0], m[1], c.gaussian.cov()));
    }
    out.extend(ellipse(0.0, 0.0, &cov));
    Ok(out)
}

/// Propagates a dispersed state from a circular 1 AU orbit for `days`, once as a single
/// linearized Gaussian, once through a velocity split with `count` components per axis,
/// and once by sampling the nonlinear dynamics.
///
/// Layout: `[points per ellipse, samples, linearized ellipse pairs, mixture ellipse pairs,
/// sample x/y pairs]`, positions in AU relative to the nominal final position.
pub fn propagation_values(
    sigma_r_km: f64,
    sigma_v_kms: f64,
    days: f64,
    count: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    if !(sigma_r_km > 0.0 && sigma_v_kms > 0.0 && days > 0.0) {
        return Err("dispersions and duration must be positive".into());
    }
    let units = Units::default();
    let sr = sigma_r_km / gmsteer::units::AU_KM;
    let sv = units.kms_to_vu(sigma_v_kms);
    let mean = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![sr * sr, sr * sr, sr * sr, sv * sv, sv * sv, sv * sv]));
    let initial = Gaussian::new(mean, cov).map_err(|e| e.to_string())?;
    let dynamics = DynamicsModel::two_body(1.0).map_err(|e| e.to_string())?;
    let t1 = units.days_to_tu(days);
    let library =
        SplitLibrary::load_or_generate(count, gmsteer::split::DEFAULT_PENALTY, None).map_err(|e| e.to_string())?;

    let linear = propagate_split(&dynamics, &[], &library, &initial, 0.0, t1).map_err(|e| e.to_string())?;
    let mixture = propagate_split(&dynamics, &[3, 4, 5], &library, &initial, 0.0, t1).map_err(|e| e.to_string())?;

    // A single control node with a zero policy turns the Monte Carlo harness into a
    // plain dispersion run.
    let problem = SteeringProblem {
        initial,
        dynamics,
        schedule: NodeSchedule::uniform(0.0, t1, 2, DMatrix::zeros(6, 3)).map_err(|e| e.to_string())?,
        execution: ExecutionErrorModel::zero(1, 3),
        split_dims: Vec::new(),
        library,
    };
    let mut policy = ControlPolicy::zeros(1, 3, 6);
    policy.ref_means[0] = problem.initial.mean().clone();
    let config = McConfig { samples: samples.max(1), seed, process_noise: false, execution_error: false };
    let mc = montecarlo::run(&policy, &problem, &config).map_err(|e| e.to_string())?;

    let (cx, cy) = (linear.mean()[0], linear.mean()[1]);
    let block = |g: &Gaussian| DMatrix::from_fn(2, 2, |i, j| g.cov()[(i, j)]);
    let mut out = vec![(ELLIPSE_POINTS + 1) as f64, mc.samples.len() as f64];
    out.extend(ellipse(0.0, 0.0, &block(&linear)));
    out.extend(ellipse(mixture.mean()[0] - cx, mixture.mean()[1] - cy, &block(&mixture)));
    for s in mc.terminal_states() {
        out.extend([s[0] - cx, s[1] - cy]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn library_curve(count: usize, penalty: f64, points: usize) -> Result<Vec<f64>, JsValue> {
    library_curve_values(count, penalty, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn split_ellipses(sxx: f64, sxy: f64, syy: f64, split_x: bool, split_y: bool) -> Result<Vec<f64>, JsValue> {
    split_ellipse_values(sxx, sxy, syy, split_x, split_y).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn propagate_segment(
    sigma_r_km: f64,
    sigma_v_kms: f64,
    days: f64,
    count: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>, JsValue> {
    propagation_values(sigma_r_km, sigma_v_kms, days, count, samples, seed).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_curve_layout() {
        let v = library_curve_values(3, 0.001, 11).unwrap();
        assert_eq!(v.len(), 2 + 6 + 33);
        assert!((v[0] - SplitLibrary::table_l3().sigma()).abs() < 1e-12);
        // Middle abscissa is zero; both densities peak there.
        let mid = 8 + 5 * 3;
        assert_eq!(v[mid], 0.0);
        assert!((v[mid + 2] - 0.3989422804014327).abs() < 1e-15);
        assert!((v[mid + 1] - v[mid + 2]).abs() < 0.02);
    }

    #[test]
    fn split_ellipses_layout_and_weights() {
        let v = split_ellipse_values(4.0, 1.0, 2.0, true, true).unwrap();
        let (n, pts) = (v[0] as usize, v[1] as usize);
        assert_eq!(n, 9);
        assert_eq!(v.len(), 2 + n * (3 + 2 * pts) + 2 * pts);
        let total: f64 = (0..n).map(|i| v[2 + i * (3 + 2 * pts)]).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(split_ellipse_values(1.0, 2.0, 1.0, true, false).is_err());
    }

    #[test]
    fn ellipse_points_lie_on_the_contour() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let inv = cov.clone().try_inverse().unwrap();
        let pts = ellipse(1.0, -1.0, &cov);
        for p in pts.chunks(2) {
            let d = DVector::from_vec(vec![p[0] - 1.0, p[1] + 1.0]);
            assert!(((d.transpose() * &inv * &d)[0] - ELLIPSE_R2).abs() < 1e-9);
        }
    }

    #[test]
    fn propagation_is_reproducible() {
        let a = propagation_values(1.0e5, 0.5, 40.0, 3, 50, 7).unwrap();
        let b = propagation_values(1.0e5, 0.5, 40.0, 3, 50, 7).unwrap();
        assert_eq!(a, b);
        let pts = a[0] as usize;
        assert_eq!(a.len(), 2 + 4 * pts + 2 * 50);
        assert!(propagation_values(-1.0, 0.5, 40.0, 3, 50, 7).is_err());
    }
}
