//! CSV and JSON writers. Every table has a header row whose column names carry units.

use std::fmt::Write as _;
use std::path::Path;

use gmsteer::dynamics::propagate_state;
use gmsteer::gaussian::Gaussian;
use gmsteer::montecarlo::{ControlUsage, MahalanobisStats, McResult};
use gmsteer::nlp::{SolveReport, LOG_HEADER};
use gmsteer::policy::ControlPolicy;
use gmsteer::scenario::ScenarioConfig;
use gmsteer::steering::{MomentTrajectory, SteeringProblem, TerminalSpec};
use nalgebra::{DMatrix, DVector, Vector6};

use crate::CliError;

/// `−2 ln(1 − 0.9975)`: squared radius of the 99.75% contour of a 2-D Gaussian.
pub const ELLIPSE_R2_9975: f64 = 11.982929094215963;
pub const ELLIPSE_POINTS: usize = 72;
pub const TRAJECTORY_SUBSTEPS: usize = 16;
pub const HISTOGRAM_BINS: usize = 80;
/// Histogram half-width in prescribed standard deviations.
pub const HISTOGRAM_HALF_WIDTH: f64 = 8.0;

const AXES: [&str; 6] = ["x", "y", "z", "vx", "vy", "vz"];
const AXIS_UNITS: [&str; 6] = ["du", "du", "du", "vu", "vu", "vu"];

fn write(dir: &Path, name: &str, text: String) -> Result<(), CliError> {
    std::fs::write(dir.join(name), text).map_err(|e| CliError::Runtime(format!("writing {name}: {e}")))
}

fn num(v: f64) -> String {
    format!("{v:.17e}")
}

fn state_header(prefix: &str) -> String {
    AXES.iter().zip(AXIS_UNITS).map(|(a, u)| format!("{prefix}{a}_{u}")).collect::<Vec<_>>().join(",")
}

/// Column names of the upper triangle of a 6×6 state covariance.
fn cov_header() -> String {
    let mut cols = Vec::new();
    for (i, a) in AXES.iter().enumerate() {
        for (j, b) in AXES.iter().enumerate().skip(i) {
            let unit = match (i < 3, j < 3) {
                (true, true) => "du2",
                (false, false) => "vu2",
                _ => "du_vu",
            };
            cols.push(format!("cov_{a}{b}_{unit}"));
        }
    }
    cols.join(",")
}

fn upper_triangle(m: &DMatrix<f64>) -> String {
    let mut vals = Vec::new();
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            vals.push(num(m[(i, j)]));
        }
    }
    vals.join(",")
}

fn join(v: impl Iterator<Item = f64>) -> String {
    v.map(num).collect::<Vec<_>>().join(",")
}

pub fn write_solver_log(dir: &Path, report: &SolveReport) -> Result<(), CliError> {
    let mut text = format!("{LOG_HEADER}\n");
    for line in &report.log {
        text.push_str(line);
        text.push('\n');
    }
    write(dir, "solver_log.txt", text)
}

/// Solve report as JSON. Wall time is deliberately left out so reruns compare equal.
pub fn solve_report_json(report: &SolveReport, cost_scale_note: &str) -> serde_json::Value {
    serde_json::json!({
        "status": report.status.as_str(),
        "iterations": report.iterations,
        "cost_vu2": report.cost,
        "cost_definition": cost_scale_note,
        "max_equality_violation": report.max_eq_violation,
        "max_inequality_violation": report.max_ineq_violation,
        "stationarity": report.stationarity,
        "jacobian_evaluations": report.jacobian_evaluations,
    })
}

pub fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write(dir, name, text)
}

/// Nominal impulses per node, with the node position for vector plots.
pub fn write_nominal_dv(dir: &Path, config: &ScenarioConfig, policy: &ControlPolicy) -> Result<(), CliError> {
    let vu = config.units.vu_kms();
    let mut text = String::from("node,time_days,x_du,y_du,z_du,dv_x_vu,dv_y_vu,dv_z_vu,dv_mag_vu,dv_mag_kms\n");
    for (k, v) in policy.v.iter().enumerate() {
        let t = config.node_times[k] * config.units.tu_days;
        let r = &policy.ref_means[k];
        let mag = v.norm();
        let _ = writeln!(
            text,
            "{k},{},{},{},{},{},{},{},{},{}",
            num(t),
            num(r[0]),
            num(r[1]),
            num(r[2]),
            num(v[0]),
            num(v[1]),
            num(v[2]),
            num(mag),
            num(mag * vu)
        );
    }
    write(dir, "nominal_dv.csv", text)
}

/// Prior, posterior and terminal moments per node.
pub fn write_moments(dir: &Path, config: &ScenarioConfig, traj: &MomentTrajectory) -> Result<(), CliError> {
    let mut text = format!("node,stage,time_days,{},{}\n", state_header("mean_"), cov_header());
    let row = |text: &mut String, k: usize, stage: &str, g: &Gaussian| {
        let t = config.node_times[k] * config.units.tu_days;
        let _ = writeln!(text, "{k},{stage},{},{},{}", num(t), join(g.mean().iter().copied()), upper_triangle(g.cov()));
    };
    for (k, node) in traj.nodes.iter().enumerate() {
        row(&mut text, k, "prior", &node.prior);
        row(&mut text, k, "posterior", &node.posterior);
    }
    row(&mut text, traj.nodes.len(), "terminal", &traj.terminal);
    write(dir, "moments.csv", text)?;

    let mut text =
        String::from("node,cov_ux_ux_vu2,cov_ux_uy_vu2,cov_ux_uz_vu2,cov_uy_uy_vu2,cov_uy_uz_vu2,cov_uz_uz_vu2\n");
    for (k, node) in traj.nodes.iter().enumerate() {
        let _ = writeln!(text, "{k},{}", upper_triangle(&node.control_cov));
    }
    write(dir, "control_covariance.csv", text)
}

/// Mean trajectory polyline: ballistic arcs from each posterior mean to the next node.
pub fn write_trajectory(
    dir: &Path,
    config: &ScenarioConfig,
    problem: &SteeringProblem,
    traj: &MomentTrajectory,
) -> Result<(), CliError> {
    let mut text = String::from("segment,time_days,x_du,y_du,z_du\n");
    let times = &config.node_times;
    for (k, node) in traj.nodes.iter().enumerate() {
        let m = node.posterior.mean();
        let x0 = Vector6::from_iterator(m.iter().copied());
        for s in 0..=TRAJECTORY_SUBSTEPS {
            let t = times[k] + (times[k + 1] - times[k]) * s as f64 / TRAJECTORY_SUBSTEPS as f64;
            let x = if s == 0 {
                x0
            } else {
                propagate_state(&x0, times[k], t, &problem.dynamics).map_err(CliError::from_core)?
            };
            let _ = writeln!(text, "{k},{},{},{},{}", num(t * config.units.tu_days), num(x[0]), num(x[1]), num(x[2]));
        }
    }
    write(dir, "trajectory.csv", text)
}

/// Planar 99.75% ellipse of the position block of `cov` around `mean`.
pub fn ellipse_points(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let a = cov[(0, 0)];
    let b = cov[(0, 1)];
    let c = cov[(1, 1)];
    // Closed-form eigen-decomposition of the symmetric 2×2 block.
    let half_trace = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let l1 = (half_trace + disc).max(0.0);
    let l2 = (half_trace - disc).max(0.0);
    let angle = 0.5 * (2.0 * b).atan2(a - c);
    let (s, co) = angle.sin_cos();
    let r = ELLIPSE_R2_9975.sqrt();
    (0..=ELLIPSE_POINTS)
        .map(|i| {
            let th = 2.0 * std::f64::consts::PI * i as f64 / ELLIPSE_POINTS as f64;
            let (u, v) = (r * l1.sqrt() * th.cos(), r * l2.sqrt() * th.sin());
            (mean[0] + co * u - s * v, mean[1] + s * u + co * v)
        })
        .collect()
}

pub fn write_ellipses(dir: &Path, traj: &MomentTrajectory, terminal: &TerminalSpec) -> Result<(), CliError> {
    let mut text = String::from("node,kind,point,x_du,y_du\n");
    let mut emit = |node: usize, kind: &str, mean: &DVector<f64>, cov: &DMatrix<f64>| {
        for (i, (x, y)) in ellipse_points(mean, cov).into_iter().enumerate() {
            let _ = writeln!(text, "{node},{kind},{i},{},{}", num(x), num(y));
        }
    };
    for (k, node) in traj.nodes.iter().enumerate() {
        emit(k, "prior", node.prior.mean(), node.prior.cov());
    }
    let last = traj.nodes.len();
    emit(last, "terminal", traj.terminal.mean(), traj.terminal.cov());
    emit(last, "desired", &terminal.target, &terminal.cov);
    write(dir, "ellipses.csv", text)
}

pub fn write_terminal_states(dir: &Path, mc: &McResult) -> Result<(), CliError> {
    let mut text = format!("sample_id,{}\n", state_header(""));
    for (id, s) in &mc.samples {
        let _ = writeln!(text, "{id},{}", join(s.terminal.iter().copied()));
    }
    write(dir, "terminal_states.csv", text)
}

pub fn write_controls(dir: &Path, mc: &McResult, vu_kms: f64) -> Result<(), CliError> {
    let mut text = String::from("sample_id,node,ux_vu,uy_vu,uz_vu,mag_vu,mag_kms\n");
    for (id, s) in &mc.samples {
        for (k, u) in s.controls.iter().enumerate() {
            let mag = u.norm();
            let _ =
                writeln!(text, "{id},{k},{},{},{},{},{}", num(u[0]), num(u[1]), num(u[2]), num(mag), num(mag * vu_kms));
        }
    }
    write(dir, "controls.csv", text)
}

pub fn write_control_usage(dir: &Path, usage: &ControlUsage) -> Result<(), CliError> {
    let mut text = String::from("node,mean_mag_vu,mean_mag_kms\n");
    for (k, (vu, kms)) in usage.per_node_vu.iter().zip(&usage.per_node_kms).enumerate() {
        let _ = writeln!(text, "{k},{},{}", num(*vu), num(*kms));
    }
    write(dir, "control_usage.csv", text)
}

pub fn write_mahalanobis(dir: &Path, mc: &McResult, stats: &MahalanobisStats) -> Result<(), CliError> {
    let mut text = String::from("sample_id,d2_position_dimensionless,d2_velocity_dimensionless\n");
    for (((id, _), p), v) in mc.samples.iter().zip(&stats.position).zip(&stats.velocity) {
        let _ = writeln!(text, "{id},{},{}", num(*p), num(*v));
    }
    write(dir, "mahalanobis.csv", text)
}

/// Terminal error histograms per axis with the prescribed Gaussian density alongside.
pub fn write_histograms(dir: &Path, terminal: &[Vector6<f64>], spec: &TerminalSpec) -> Result<(), CliError> {
    let mut text =
        String::from("axis,unit,error_lo_in_unit,error_hi_in_unit,count,density_per_unit,desired_pdf_per_unit\n");
    let n = terminal.len().max(1) as f64;
    for i in 0..6 {
        let sigma = spec.cov[(i, i)].sqrt();
        let half = HISTOGRAM_HALF_WIDTH * sigma;
        let width = 2.0 * half / HISTOGRAM_BINS as f64;
        let mut counts = vec![0usize; HISTOGRAM_BINS];
        for y in terminal {
            let e = y[i] - spec.target[i];
            if e >= -half && e < half {
                let b = (((e + half) / width) as usize).min(HISTOGRAM_BINS - 1);
                counts[b] += 1;
            }
        }
        for (b, &count) in counts.iter().enumerate() {
            let lo = -half + width * b as f64;
            let mid = lo + 0.5 * width;
            let pdf = (-0.5 * (mid / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            let _ = writeln!(
                text,
                "{},{},{},{},{count},{},{}",
                AXES[i],
                AXIS_UNITS[i],
                num(lo),
                num(lo + width),
                num(count as f64 / (n * width)),
                num(pdf)
            );
        }
    }
    write(dir, "histograms.csv", text)
}
