//! Monte Carlo validation: closed-loop sample trajectories under the nonlinear dynamics
//! and the dispersion statistics computed from them.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dynamics::{propagate_state, to_state, DynamicsModel};
use crate::error::{Error, Result};
use crate::linalg::covariance_sqrt;
use crate::policy::ControlPolicy;
use crate::steering::{SteeringProblem, TerminalSpec};
use crate::units::Units;

/// Two-sided 99.9% gate of a standard normal: `P(|Z| ≤ 3.2905) = 0.999`.
pub const GATE_Z_999: f64 = 3.2905;
/// 99.9% quantile of the chi-square distribution with 3 degrees of freedom.
pub const GATE_CHI2_3DOF_999: f64 = 16.27;
/// Fixed substeps per segment when process noise is simulated.
pub const NOISE_SUBSTEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    pub process_noise: bool,
    pub execution_error: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { samples: 5000, seed: 1, process_noise: false, execution_error: false }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::param("samples", "need at least one sample"));
        }
        Ok(())
    }
}

/// One closed-loop trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrajectory {
    /// State just before each control node.
    pub node_states: Vec<Vector6<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub terminal: Vector6<f64>,
}

#[derive(Debug, Clone)]
pub struct McResult {
    /// Successful samples in sample-index order, tagged with their index.
    pub samples: Vec<(usize, SampleTrajectory)>,
    /// Indices of samples dropped after a numerical failure.
    pub flagged: Vec<usize>,
}

impl McResult {
    pub fn terminal_states(&self) -> Vec<Vector6<f64>> {
        self.samples.iter().map(|(_, s)| s.terminal).collect()
    }

    pub fn controls(&self) -> Vec<&[DVector<f64>]> {
        self.samples.iter().map(|(_, s)| s.controls.as_slice()).collect()
    }
}

/// Deterministic per-sample generator: stream `index` of the master seed.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn normal_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Runge–Kutta drift plus additive `√dt` noise increments on a fixed grid.
fn propagate_noisy(
    x: &Vector6<f64>,
    t0: f64,
    t1: f64,
    model: &DynamicsModel,
    noise_sqrt: &DMatrix<f64>,
    rng: &mut impl Rng,
) -> Result<Vector6<f64>> {
    let dt = (t1 - t0) / NOISE_SUBSTEPS as f64;
    let mut x = *x;
    for _ in 0..NOISE_SUBSTEPS {
        let k1 = model.field(&x)?;
        let k2 = model.field(&(x + k1 * (0.5 * dt)))?;
        let k3 = model.field(&(x + k2 * (0.5 * dt)))?;
        let k4 = model.field(&(x + k3 * dt))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let xi = normal_vector(rng, 6);
        x += Vector6::from_column_slice((noise_sqrt * xi).as_slice()) * dt.abs().sqrt();
    }
    Ok(x)
}

/// Applies `u_k = v_k + G_k (x − m_k) + δu_k` at every node and integrates the nonlinear
/// dynamics in between. `policy.ref_means` must come from a forward pass.
pub fn simulate_sample(
    x0: &Vector6<f64>,
    policy: &ControlPolicy,
    problem: &SteeringProblem,
    config: &McConfig,
    rng: &mut impl Rng,
) -> Result<SampleTrajectory> {
    let times = &problem.schedule.times;
    let fu = &problem.schedule.control_map;
    let nodes = problem.control_nodes();
    if policy.len() != nodes {
        return Err(Error::Dimension("policy length differs from control nodes".into()));
    }
    let noisy = config.process_noise && problem.dynamics.has_process_noise();
    let noise_sqrt = if noisy {
        covariance_sqrt(&DMatrix::from_column_slice(6, 6, problem.dynamics.diffusion().as_slice()))?
    } else {
        DMatrix::zeros(0, 0)
    };
    let exec_sqrt = if config.execution_error {
        problem.execution.cov.iter().map(covariance_sqrt).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut x = *x0;
    let mut node_states = Vec::with_capacity(nodes);
    let mut controls = Vec::with_capacity(nodes);
    for k in 0..nodes {
        node_states.push(x);
        let dev = DVector::from_column_slice(x.as_slice()) - &policy.ref_means[k];
        let mut u = &policy.v[k] + &policy.gains[k] * dev;
        if config.execution_error {
            u += &exec_sqrt[k] * normal_vector(rng, u.len());
        }
        x += to_state(&(fu * &u))?;
        controls.push(u);
        x = if noisy {
            propagate_noisy(&x, times[k], times[k + 1], &problem.dynamics, &noise_sqrt, rng)
        } else {
            propagate_state(&x, times[k], times[k + 1], &problem.dynamics)
        }
        .map_err(|e| Error::at_node(k + 1, e))?;
    }
    Ok(SampleTrajectory { node_states, controls, terminal: x })
}

/// Draws `config.samples` initial states from the initial Gaussian and simulates each
/// on its own random stream. Samples that hit a numerical failure are flagged, not fatal.
pub fn run(policy: &ControlPolicy, problem: &SteeringProblem, config: &McConfig) -> Result<McResult> {
    config.validate()?;
    let initial_sqrt = covariance_sqrt(problem.initial.cov())?;
    let mean = to_state(problem.initial.mean())?;
    let outcomes: Vec<Result<SampleTrajectory>> = (0..config.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(config.seed, i);
            let x0 = mean + to_state(&(&initial_sqrt * normal_vector(&mut rng, 6)))?;
            simulate_sample(&x0, policy, problem, config, &mut rng)
        })
        .collect();
    let mut samples = Vec::with_capacity(config.samples);
    let mut flagged = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(s) => samples.push((i, s)),
            Err(e) if e.is_numerical() => flagged.push(i),
            Err(e) => return Err(e),
        }
    }
    Ok(McResult { samples, flagged })
}

/// Percentage of samples inside the per-axis 99.9% gate `|y_i − x_f,i| ≤ z √P_f[i,i]`.
pub fn gate_percentages(terminal: &[Vector6<f64>], spec: &TerminalSpec) -> [f64; 6] {
    let mut out = [0.0; 6];
    if terminal.is_empty() {
        return out;
    }
    for (i, slot) in out.iter_mut().enumerate() {
        let half = GATE_Z_999 * spec.cov[(i, i)].sqrt();
        let inside = terminal.iter().filter(|y| (y[i] - spec.target[i]).abs() <= half).count();
        *slot = 100.0 * inside as f64 / terminal.len() as f64;
    }
    out
}

/// Box-plot summary with Tukey whiskers (1.5 IQR, clipped to the data).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
}

/// Linearly interpolated quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn box_summary(values: &[f64]) -> Option<BoxSummary> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let (q1, median, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
    let iqr = q3 - q1;
    let lower_whisker = *s.iter().find(|&&v| v >= q1 - 1.5 * iqr).unwrap();
    let upper_whisker = *s.iter().rev().find(|&&v| v <= q3 + 1.5 * iqr).unwrap();
    Some(BoxSummary { min: s[0], q1, median, q3, max: s[s.len() - 1], lower_whisker, upper_whisker })
}

#[derive(Debug, Clone)]
pub struct MahalanobisStats {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub position_summary: Option<BoxSummary>,
    pub velocity_summary: Option<BoxSummary>,
    /// Percent of samples with the position (velocity) distance inside the 3-DOF gate.
    pub position_within_gate: f64,
    pub velocity_within_gate: f64,
}

/// Squared Mahalanobis distances to the target on the position and velocity blocks.
pub fn mahalanobis_stats(terminal: &[Vector6<f64>], spec: &TerminalSpec) -> Result<MahalanobisStats> {
    let block = |off: usize, name: &str| -> Result<Matrix3<f64>> {
        let b: Matrix3<f64> = Matrix3::from_fn(|i, j| spec.cov[(off + i, off + j)]);
        b.try_inverse().ok_or_else(|| Error::param(name, "terminal covariance block is singular"))
    };
    let pos_inv = block(0, "terminal position covariance")?;
    let vel_inv = block(3, "terminal velocity covariance")?;
    let target = Vector6::from_column_slice(spec.target.as_slice());
    let mut position = Vec::with_capacity(terminal.len());
    let mut velocity = Vec::with_capacity(terminal.len());
    for y in terminal {
        let d = y - target;
        let dp: Vector3<f64> = d.fixed_rows::<3>(0).into();
        let dv: Vector3<f64> = d.fixed_rows::<3>(3).into();
        position.push(dp.dot(&(pos_inv * dp)));
        velocity.push(dv.dot(&(vel_inv * dv)));
    }
    let within = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            100.0 * v.iter().filter(|&&d| d <= GATE_CHI2_3DOF_999).count() as f64 / v.len() as f64
        }
    };
    Ok(MahalanobisStats {
        position_summary: box_summary(&position),
        velocity_summary: box_summary(&velocity),
        position_within_gate: within(&position),
        velocity_within_gate: within(&velocity),
        position,
        velocity,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlUsage {
    pub per_node_vu: Vec<f64>,
    pub per_node_kms: Vec<f64>,
    pub total_kms: f64,
}

/// Mean control magnitude per node over the samples, and its sum in km/s.
pub fn control_usage(controls: &[&[DVector<f64>]], units: &Units) -> ControlUsage {
    let nodes = controls.first().map_or(0, |c| c.len());
    let mut per_node_vu = vec![0.0; nodes];
    for sample in controls {
        for (k, u) in sample.iter().enumerate() {
            per_node_vu[k] += u.norm();
        }
    }
    if !controls.is_empty() {
        for v in &mut per_node_vu {
            *v /= controls.len() as f64;
        }
    }
    let per_node_kms: Vec<f64> = per_node_vu.iter().map(|&v| units.vu_to_kms(v)).collect();
    let total_kms = per_node_kms.iter().sum();
    ControlUsage { per_node_vu, per_node_kms, total_kms }
}

/// Fraction of (sample, node) pairs whose control magnitude exceeds `rho_u`.
pub fn chance_violation_fraction(controls: &[&[DVector<f64>]], rho_u: f64) -> f64 {
    let total: usize = controls.iter().map(|c| c.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let over: usize = controls.iter().map(|c| c.iter().filter(|u| u.norm() > rho_u).count()).sum();
    over as f64 / total as f64
}

/// One-sided 99% binomial slack `2.326 √(p(1−p)/n)` on an empirical fraction.
pub fn binomial_slack_99(p: f64, n: usize) -> f64 {
    2.326 * (p * (1.0 - p) / n.max(1) as f64).sqrt()
}

/// Per-axis sample mean and its standard error.
pub fn mean_and_standard_error(states: &[Vector6<f64>]) -> (Vector6<f64>, Vector6<f64>) {
    let n = states.len() as f64;
    let mean = states.iter().fold(Vector6::zeros(), |acc, s| acc + s) / n;
    let var = states.iter().fold(Vector6::zeros(), |acc, s| {
        let d = s - mean;
        acc + d.component_mul(&d)
    }) / (n - 1.0).max(1.0);
    (mean, var.map(|v| (v / n).sqrt()))
}
