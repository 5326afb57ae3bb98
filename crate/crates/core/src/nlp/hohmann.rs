use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::policy::ControlPolicy;
use crate::steering::SteeringProblem;

/// Departure and arrival impulses of a Hohmann transfer between circular orbits.
pub fn hohmann_delta_v(mu: f64, r1: f64, r2: f64) -> Result<(f64, f64)> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::param("mu", "must be positive"));
    }
    if !(r1 > 0.0 && r1.is_finite() && r2 > 0.0 && r2.is_finite()) {
        return Err(Error::param("radius", format!("degenerate transfer radii {r1}, {r2}")));
    }
    let sum = r1 + r2;
    let dv1 = (mu / r1).sqrt() * ((2.0 * r2 / sum).sqrt() - 1.0);
    let dv2 = (mu / r2).sqrt() * (1.0 - (2.0 * r1 / sum).sqrt());
    Ok((dv1.abs(), dv2.abs()))
}

/// Open-loop guess spreading the Hohmann Δv equally over the control nodes, along the
/// initial mean velocity; all gains zero.
pub fn hohmann_initial_guess(problem: &SteeringProblem, target: &DVector<f64>) -> Result<ControlPolicy> {
    let mu = problem.dynamics.mu().ok_or_else(|| Error::param("dynamics", "Hohmann guess needs two-body dynamics"))?;
    let n = problem.state_dim();
    let m = problem.control_dim();
    if n != 6 || m != 3 || target.len() != 6 {
        return Err(Error::Dimension("Hohmann guess expects 6 states and 3 velocity controls".into()));
    }
    let mean = problem.initial.mean();
    let r1 = mean.rows(0, 3).norm();
    let r2 = target.rows(0, 3).norm();
    let (dv1, dv2) = hohmann_delta_v(mu, r1, r2)?;
    let vel = mean.rows(3, 3).into_owned();
    let speed = vel.norm();
    if !(speed > 0.0) {
        return Err(Error::param("v0", "initial velocity is zero"));
    }
    let nodes = problem.control_nodes();
    let per_node = (dv1 + dv2) / nodes as f64;
    let v = vec![vel * (per_node / speed); nodes];
    ControlPolicy::new(v, vec![DMatrix::zeros(m, n); nodes])
}
