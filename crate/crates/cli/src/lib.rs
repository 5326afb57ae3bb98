//! Scenario pipeline behind the `gmsteer` binary: optimize, propagate, Monte Carlo, and
//! the files each stage leaves in the output directory.

pub mod output;

use std::path::{Path, PathBuf};

use gmsteer::montecarlo::{
    self, binomial_slack_99, chance_violation_fraction, control_usage, gate_percentages, mahalanobis_stats,
    mean_and_standard_error, McResult, GATE_CHI2_3DOF_999, GATE_Z_999,
};
use gmsteer::nlp::{self, SolveReport, SolveStatus};
use gmsteer::policy::ControlPolicy;
use gmsteer::scenario::ScenarioConfig;
use gmsteer::steering::{forward_pass, MomentTrajectory, SteeringProblem};

pub const POLICY_FILE: &str = "policy.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Optimize,
    Propagate,
    MonteCarlo,
    Full,
}

/// Command-line overrides applied on top of the scenario file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub gamma: Option<f64>,
    pub max_iterations: Option<usize>,
    /// Policy to read for `propagate`/`montecarlo`; defaults to `<out>/policy.txt`.
    pub policy: Option<PathBuf>,
    pub verbose: bool,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad scenario, arguments or input files.
    Config(String),
    /// The optimizer stopped without converging; artifacts were still written.
    NotConverged(SolveStatus),
    /// Numerical failure or I/O trouble while running.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotConverged(_) => 2,
            CliError::Config(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    pub fn from_core(e: gmsteer::error::Error) -> Self {
        if e.is_numerical() {
            CliError::Runtime(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::NotConverged(s) => write!(f, "solver did not converge (status {})", s.as_str()),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Resolves the scenario and applies the overrides.
pub fn load_config(scenario: &str, overrides: &Overrides) -> Result<ScenarioConfig, CliError> {
    let mut config = ScenarioConfig::resolve(scenario).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(seed) = overrides.seed {
        config.montecarlo.seed = seed;
    }
    if let Some(samples) = overrides.samples {
        config.montecarlo.samples = samples;
    }
    if let Some(gamma) = overrides.gamma {
        config.chance.gamma = gamma;
    }
    if let Some(iters) = overrides.max_iterations {
        config.solver.max_iterations = iters;
    }
    config.solver.verbose = overrides.verbose;
    config.chance.validate().map_err(|e| CliError::Config(e.to_string()))?;
    config.montecarlo.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

/// What a run produced; the solve report is present when the optimizer ran.
pub struct Outcome {
    pub report: Option<SolveReport>,
    pub policy: ControlPolicy,
    pub trajectory: Option<MomentTrajectory>,
    pub montecarlo: Option<McResult>,
}

/// Runs `stage` and writes its artifacts into `out`. A non-converged solve still writes
/// everything (later stages of `full` run on the last iterate) before reporting
/// [`CliError::NotConverged`].
pub fn run(stage: Stage, config: &ScenarioConfig, out: &Path, overrides: &Overrides) -> Result<Outcome, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("creating {}: {e}", out.display())))?;
    let problem = config.build_problem(None).map_err(CliError::from_core)?;

    let (mut policy, report) = match stage {
        Stage::Optimize | Stage::Full => {
            let (policy, report) = optimize(config, &problem, out)?;
            (policy, Some(report))
        }
        Stage::Propagate | Stage::MonteCarlo => {
            let path = overrides.policy.clone().unwrap_or_else(|| out.join(POLICY_FILE));
            let policy =
                ControlPolicy::load(&path).map_err(|e| CliError::Config(format!("policy {}: {e}", path.display())))?;
            policy
                .check_shape(problem.control_nodes(), problem.control_dim(), problem.state_dim())
                .map_err(|e| CliError::Config(e.to_string()))?;
            (policy, None)
        }
    };

    let mut trajectory = None;
    if matches!(stage, Stage::Propagate | Stage::Full) {
        trajectory = Some(propagate(config, &problem, &mut policy, out)?);
    }
    let mut mc = None;
    if matches!(stage, Stage::MonteCarlo | Stage::Full) {
        if policy.ref_means.iter().all(|m| m.iter().all(|v| *v == 0.0)) {
            // Reference means come from a forward pass; a bare policy file may lack them.
            forward_pass(&mut policy, &problem).map_err(CliError::from_core)?;
        }
        mc = Some(monte_carlo(config, &problem, &policy, out, report.as_ref())?);
    }

    if let Some(r) = &report {
        if r.status != SolveStatus::Converged {
            return Err(CliError::NotConverged(r.status));
        }
    }
    Ok(Outcome { report, policy, trajectory, montecarlo: mc })
}

fn optimize(
    config: &ScenarioConfig,
    problem: &SteeringProblem,
    out: &Path,
) -> Result<(ControlPolicy, SolveReport), CliError> {
    let guess = nlp::hohmann_initial_guess(problem, &config.terminal.target).map_err(CliError::from_core)?;
    let (policy, _, report) = nlp::solve(problem, config.chance, config.terminal.clone(), &guess, &config.solver)
        .map_err(CliError::from_core)?;
    eprintln!(
        "optimize: {} after {} iterations, cost {:.9e} VU², {:.2} s",
        report.status.as_str(),
        report.iterations,
        report.cost,
        report.wall_time.as_secs_f64()
    );
    policy.save(&out.join(POLICY_FILE)).map_err(|e| CliError::Runtime(e.to_string()))?;
    output::write_solver_log(out, &report)?;
    output::write_json(out, "solve_report.json", &output::solve_report_json(&report, "sum over nodes of |v_k|^2"))?;
    output::write_nominal_dv(out, config, &policy)?;
    Ok((policy, report))
}

fn propagate(
    config: &ScenarioConfig,
    problem: &SteeringProblem,
    policy: &mut ControlPolicy,
    out: &Path,
) -> Result<MomentTrajectory, CliError> {
    let traj = forward_pass(policy, problem).map_err(CliError::from_core)?;
    output::write_moments(out, config, &traj)?;
    output::write_trajectory(out, config, problem, &traj)?;
    output::write_ellipses(out, &traj, &config.terminal)?;
    output::write_nominal_dv(out, config, policy)?;
    Ok(traj)
}

fn monte_carlo(
    config: &ScenarioConfig,
    problem: &SteeringProblem,
    policy: &ControlPolicy,
    out: &Path,
    report: Option<&SolveReport>,
) -> Result<McResult, CliError> {
    let started = std::time::Instant::now();
    let mc = montecarlo::run(policy, problem, &config.montecarlo).map_err(CliError::from_core)?;
    eprintln!(
        "montecarlo: {} samples ({} flagged), {:.2} s",
        mc.samples.len(),
        mc.flagged.len(),
        started.elapsed().as_secs_f64()
    );
    let terminal = mc.terminal_states();
    let controls = mc.controls();
    let vu = config.units.vu_kms();
    let usage = control_usage(&controls, &config.units);
    output::write_terminal_states(out, &mc)?;
    output::write_controls(out, &mc, vu)?;
    output::write_control_usage(out, &usage)?;
    output::write_histograms(out, &terminal, &config.terminal)?;

    let mut summary = serde_json::json!({
        "scenario": config.name,
        "components": config.components(),
        "samples": config.montecarlo.samples,
        "seed": config.montecarlo.seed,
        "process_noise": config.montecarlo.process_noise,
        "execution_error": config.montecarlo.execution_error,
        "flagged_samples": mc.flagged,
        "gate_z": GATE_Z_999,
        "gate_percentages": axis_map(&gate_percentages(&terminal, &config.terminal)),
        "mean_total_dv_kms": usage.total_kms,
        "nominal_total_dv_kms": policy.v.iter().map(|v| v.norm()).sum::<f64>() * vu,
    });
    if !terminal.is_empty() {
        let (mean, se) = mean_and_standard_error(&terminal);
        let n = terminal.len() as f64;
        let three_sigma: Vec<f64> = (0..6).map(|i| 3.0 * se[i] * n.sqrt()).collect();
        let prescribed: Vec<f64> = (0..6).map(|i| 3.0 * config.terminal.cov[(i, i)].sqrt()).collect();
        summary["terminal_mean_error"] =
            axis_map(&(0..6).map(|i| mean[i] - config.terminal.target[i]).collect::<Vec<_>>());
        summary["terminal_mean_standard_error"] = axis_map(se.as_slice());
        summary["terminal_three_sigma_mc"] = axis_map(&three_sigma);
        summary["terminal_three_sigma_prescribed"] = axis_map(&prescribed);
    }
    let rho = config.chance.rho_u;
    let pairs = controls.iter().map(|c| c.len()).sum::<usize>();
    summary["chance_violation_fraction"] = serde_json::json!(chance_violation_fraction(&controls, rho));
    summary["chance_violation_allowance"] =
        serde_json::json!(config.chance.beta + binomial_slack_99(config.chance.beta, pairs));
    match mahalanobis_stats(&terminal, &config.terminal) {
        Ok(stats) => {
            output::write_mahalanobis(out, &mc, &stats)?;
            summary["mahalanobis"] = serde_json::json!({
                "gate_chi2_3dof": GATE_CHI2_3DOF_999,
                "position_within_gate_percent": stats.position_within_gate,
                "velocity_within_gate_percent": stats.velocity_within_gate,
                "position": stats.position_summary.map(box_json),
                "velocity": stats.velocity_summary.map(box_json),
            });
        }
        Err(e) => return Err(CliError::Config(format!("terminal covariance blocks: {e}"))),
    }
    if let Some(r) = report {
        summary["solver"] = output::solve_report_json(r, "sum over nodes of |v_k|^2");
    }
    output::write_json(out, "summary.json", &summary)?;
    Ok(mc)
}

fn axis_map(v: &[f64]) -> serde_json::Value {
    serde_json::json!({ "x": v[0], "y": v[1], "z": v[2], "vx": v[3], "vy": v[4], "vz": v[5] })
}

fn box_json(b: montecarlo::BoxSummary) -> serde_json::Value {
    serde_json::json!({
        "min": b.min,
        "q1": b.q1,
        "median": b.median,
        "q3": b.q3,
        "max": b.max,
        "lower_whisker": b.lower_whisker,
        "upper_whisker": b.upper_whisker,
    })
}
