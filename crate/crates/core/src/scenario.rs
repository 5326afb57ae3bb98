//! Scenario configuration: TOML schema with unit-suffixed keys, validation, the built-in
//! Earth-to-Mars presets, and assembly of the steering problem.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::linalg::check_psd;
use crate::montecarlo::McConfig;
use crate::nlp::{Algorithm, SolverConfig};
use crate::split::SplitLibrary;
use crate::steering::{ChanceConstraintParams, ExecutionErrorModel, NodeSchedule, SteeringProblem, TerminalSpec};
use crate::units::Units;

pub const PRESETS: [&str; 3] = ["mars_L1", "mars_L27", "mars_L243"];

const MARS_BASE: &str = r#"
mu_du3_tu2 = 1.0
du_km = 149597870.7
tu_days = 58.0
duration_days = 358.0
nodes = 31
r0_du = [-0.940, -0.345, 0.000]
v0_vu = [0.328, -0.942, 0.000]
rf_du = [-1.154, 1.183, 0.053]
vf_vu = [-0.551, -0.498, 0.003]
rho_u_kms = 0.76
beta = 0.05
gamma = 1.0

[initial_covariance]
position_var_du2 = 1e-4
velocity_var_vu2 = 1e-5

[terminal_covariance]
position_var_du2 = 1e-6
velocity_var_vu2 = 1e-7
"#;

/// TOML text of a built-in preset.
pub fn preset_toml(name: &str) -> Option<String> {
    let split = match name {
        "mars_L1" => "dims = []",
        "mars_L27" => "library = 3\npenalty = 0.001\ndims = [3, 4, 5]",
        // Five split axes give 3⁵ = 243 components: in-plane position plus all velocity.
        "mars_L243" => "library = 3\npenalty = 0.001\ndims = [0, 1, 3, 4, 5]",
        _ => return None,
    };
    Some(format!("name = \"{name}\"\n{MARS_BASE}\n[split]\n{split}\n"))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCovariance {
    position_var_du2: Option<f64>,
    velocity_var_vu2: Option<f64>,
    /// Full 6×6 matrix in mixed DU/VU units; overrides the diagonal fields.
    matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSplit {
    library: Option<usize>,
    penalty: Option<f64>,
    dims: Vec<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawMonteCarlo {
    samples: Option<usize>,
    seed: Option<u64>,
    process_noise: Option<bool>,
    execution_error: Option<bool>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    max_iterations: Option<usize>,
    feasibility_tol: Option<f64>,
    optimality_tol: Option<f64>,
    algorithm: Option<String>,
    gain_bound: Option<f64>,
    causal_jacobian: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    mu_du3_tu2: f64,
    du_km: f64,
    tu_days: f64,
    duration_days: f64,
    nodes: usize,
    node_times_days: Option<Vec<f64>>,
    r0_du: [f64; 3],
    v0_vu: [f64; 3],
    rf_du: [f64; 3],
    vf_vu: [f64; 3],
    rho_u_kms: f64,
    beta: f64,
    gamma: f64,
    initial_covariance: RawCovariance,
    terminal_covariance: RawCovariance,
    /// `F_w`, 6×p; identity when absent.
    noise_map: Option<Vec<Vec<f64>>>,
    /// `Q`, p×p in nondimensional units; zero when absent.
    psd_nd: Option<Vec<Vec<f64>>>,
    /// `F_u`, 6×m; maps into velocity when absent.
    control_map: Option<Vec<Vec<f64>>>,
    /// `P_δuδu`, m×m in VU²; zero when absent.
    execution_cov_vu2: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    split: RawSplit,
    #[serde(default)]
    montecarlo: RawMonteCarlo,
    #[serde(default)]
    solver: RawSolver,
}

/// Fully validated scenario in nondimensional units.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub units: Units,
    pub mu: f64,
    pub initial: Gaussian,
    pub terminal: TerminalSpec,
    /// Node epochs in TU, starting at zero; the last one is the terminal node.
    pub node_times: Vec<f64>,
    pub chance: ChanceConstraintParams,
    pub control_map: DMatrix<f64>,
    pub noise_map: DMatrix<f64>,
    pub psd: DMatrix<f64>,
    pub execution_cov: DMatrix<f64>,
    pub library_size: usize,
    pub library_penalty: f64,
    pub split_dims: Vec<usize>,
    pub montecarlo: McConfig,
    pub solver: SolverConfig,
}

fn matrix(field: &str, rows: &[Vec<f64>], shape: Option<(usize, usize)>) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::param(field, "rows must be non-empty and of equal length"));
    }
    if let Some((er, ec)) = shape {
        if (r, c) != (er, ec) {
            return Err(Error::param(field, format!("expected {er}x{ec}, found {r}x{c}")));
        }
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::param(field, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn covariance(field: &str, raw: &RawCovariance) -> Result<DMatrix<f64>> {
    let cov = match (&raw.matrix, raw.position_var_du2, raw.velocity_var_vu2) {
        (Some(m), None, None) => matrix(field, m, Some((6, 6)))?,
        (None, Some(p), Some(v)) => DMatrix::from_diagonal(&DVector::from_fn(6, |i, _| if i < 3 { p } else { v })),
        _ => return Err(Error::param(field, "give either `matrix` or both `position_var_du2` and `velocity_var_vu2`")),
    };
    if (0..6).any(|i| (0..i).any(|j| (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * cov.amax().max(1e-300))) {
        return Err(Error::param(field, "matrix is not symmetric"));
    }
    check_psd(&cov).map_err(|e| Error::param(field, e.to_string()))?;
    Ok(cov)
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::param(field, format!("{v} is not a positive finite number")))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Self::from_raw(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = preset_toml(name)
            .ok_or_else(|| Error::Config(format!("unknown preset `{name}` (known: {})", PRESETS.join(", "))))?;
        Self::from_toml_str(&text)
    }

    /// A preset name or a path to a TOML file.
    pub fn resolve(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        // A bare name that is not a file is taken as a preset, so typos list the presets.
        if PRESETS.contains(&spec) || (!path.exists() && path.extension().is_none() && path.components().count() == 1) {
            Self::preset(spec)
        } else {
            Self::load(path)
        }
    }

    fn from_raw(raw: RawScenario) -> Result<Self> {
        let units = Units { du_km: positive("du_km", raw.du_km)?, tu_days: positive("tu_days", raw.tu_days)? };
        let mu = positive("mu_du3_tu2", raw.mu_du3_tu2)?;
        let duration = positive("duration_days", raw.duration_days)?;
        if raw.nodes < 2 {
            return Err(Error::param("nodes", "need at least two node epochs"));
        }
        let node_times = match raw.node_times_days {
            Some(days) => {
                if days.len() != raw.nodes {
                    return Err(Error::param("node_times_days", format!("expected {} epochs", raw.nodes)));
                }
                if days[0] != 0.0 || (days[days.len() - 1] - duration).abs() > 1e-9 * duration {
                    return Err(Error::param("node_times_days", "must run from 0 to duration_days"));
                }
                if days.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::param("node_times_days", "epochs must increase strictly"));
                }
                days.iter().map(|&d| units.days_to_tu(d)).collect()
            }
            None => {
                let tf = units.days_to_tu(duration);
                let k = raw.nodes - 1;
                (0..raw.nodes).map(|i| if i == k { tf } else { tf * i as f64 / k as f64 }).collect()
            }
        };

        let vec6 = |a: [f64; 3], b: [f64; 3]| DVector::from_iterator(6, a.into_iter().chain(b));
        let m0 = vec6(raw.r0_du, raw.v0_vu);
        let xf = vec6(raw.rf_du, raw.vf_vu);
        if m0.iter().chain(xf.iter()).any(|v| !v.is_finite()) {
            return Err(Error::param("r0_du", "states must be finite"));
        }
        let initial = Gaussian::new(m0, covariance("initial_covariance", &raw.initial_covariance)?)?;
        let terminal = TerminalSpec::new(xf, covariance("terminal_covariance", &raw.terminal_covariance)?)?;

        let control_map = match &raw.control_map {
            Some(rows) => matrix("control_map", rows, None)?,
            None => {
                let mut f = DMatrix::zeros(6, 3);
                f.view_mut((3, 0), (3, 3)).fill_with_identity();
                f
            }
        };
        if control_map.nrows() != 6 {
            return Err(Error::param("control_map", "must have 6 rows"));
        }
        let m = control_map.ncols();
        let noise_map = match &raw.noise_map {
            Some(rows) => matrix("noise_map", rows, None)?,
            None => DMatrix::identity(6, 6),
        };
        if noise_map.nrows() != 6 {
            return Err(Error::param("noise_map", "must have 6 rows"));
        }
        let p = noise_map.ncols();
        let psd = match &raw.psd_nd {
            Some(rows) => matrix("psd_nd", rows, Some((p, p)))?,
            None => DMatrix::zeros(p, p),
        };
        check_psd(&psd).map_err(|e| Error::param("psd_nd", e.to_string()))?;
        let execution_cov = match &raw.execution_cov_vu2 {
            Some(rows) => matrix("execution_cov_vu2", rows, Some((m, m)))?,
            None => DMatrix::zeros(m, m),
        };
        check_psd(&execution_cov).map_err(|e| Error::param("execution_cov_vu2", e.to_string()))?;

        let rho_u = units.kms_to_vu(positive("rho_u_kms", raw.rho_u_kms)?);
        let chance = ChanceConstraintParams::new(rho_u, raw.beta, raw.gamma, m)?;

        let split_dims = raw.split.dims.clone();
        let mut seen = [false; 6];
        for &d in &split_dims {
            if d >= 6 || seen[d] {
                return Err(Error::param("split.dims", format!("{split_dims:?} must be distinct indices below 6")));
            }
            seen[d] = true;
        }
        let library_size = raw.split.library.unwrap_or(3);
        if !(3..=5).contains(&library_size) {
            return Err(Error::param("split.library", format!("{library_size} is not 3, 4 or 5")));
        }
        let library_penalty = positive("split.penalty", raw.split.penalty.unwrap_or(0.001))?;

        let mc = &raw.montecarlo;
        let montecarlo = McConfig {
            samples: mc.samples.unwrap_or(5000),
            seed: mc.seed.unwrap_or(1),
            process_noise: mc.process_noise.unwrap_or(false),
            execution_error: mc.execution_error.unwrap_or(false),
        };
        montecarlo.validate().map_err(|_| Error::param("montecarlo.samples", "need at least one sample"))?;

        let s = &raw.solver;
        let defaults = SolverConfig::default();
        let algorithm = match s.algorithm.as_deref() {
            None | Some("sqp") => Algorithm::Sqp,
            Some("augmented-lagrangian") => Algorithm::AugmentedLagrangian,
            Some(other) => {
                return Err(Error::param(
                    "solver.algorithm",
                    format!("`{other}` is not `sqp` or `augmented-lagrangian`"),
                ))
            }
        };
        let solver = SolverConfig {
            max_iterations: s.max_iterations.unwrap_or(defaults.max_iterations),
            feasibility_tol: positive("solver.feasibility_tol", s.feasibility_tol.unwrap_or(defaults.feasibility_tol))?,
            optimality_tol: positive("solver.optimality_tol", s.optimality_tol.unwrap_or(defaults.optimality_tol))?,
            algorithm,
            gain_bound: s.gain_bound.map(|b| positive("solver.gain_bound", b)).transpose()?,
            causal_jacobian: s.causal_jacobian.unwrap_or(defaults.causal_jacobian),
            verbose: false,
        };

        Ok(Self {
            name: raw.name.unwrap_or_else(|| "custom".into()),
            units,
            mu,
            initial,
            terminal,
            node_times,
            chance,
            control_map,
            noise_map,
            psd,
            execution_cov,
            library_size,
            library_penalty,
            split_dims,
            montecarlo,
            solver,
        })
    }

    pub fn control_nodes(&self) -> usize {
        self.node_times.len() - 1
    }

    /// Number of mixture components after a full split.
    pub fn components(&self) -> usize {
        self.library_size.pow(self.split_dims.len() as u32)
    }

    /// Assembles the steering problem; split libraries other than the tabulated one are
    /// generated on first use and cached in `cache_dir` when given.
    pub fn build_problem(&self, cache_dir: Option<&Path>) -> Result<SteeringProblem> {
        let dynamics =
            DynamicsModel::two_body(self.mu)?.with_process_noise(self.noise_map.clone(), self.psd.clone())?;
        let schedule = NodeSchedule::from_times(self.node_times.clone(), self.control_map.clone())?;
        let nodes = schedule.control_nodes();
        let execution = ExecutionErrorModel::constant(nodes, self.execution_cov.clone())?;
        let library = SplitLibrary::load_or_generate(self.library_size, self.library_penalty, cache_dir)?;
        Ok(SteeringProblem {
            initial: self.initial.clone(),
            dynamics,
            schedule,
            execution,
            split_dims: self.split_dims.clone(),
            library,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mars_l27_preset() {
        let s = ScenarioConfig::preset("mars_L27").unwrap();
        assert_eq!(s.node_times.len(), 31);
        assert_eq!(s.control_nodes(), 30);
        assert_eq!(s.chance.beta, 0.05);
        assert!((s.chance.rho_u - 0.025458).abs() < 1e-6);
        assert_eq!(s.split_dims, vec![3, 4, 5]);
        assert_eq!(s.components(), 27);
        assert!((s.node_times[30] - 358.0 / 58.0).abs() < 1e-15);
        assert_eq!(s.initial.cov()[(0, 0)], 1e-4);
        assert_eq!(s.terminal.cov[(5, 5)], 1e-7);
    }

    #[test]
    fn mars_l1_preset_is_single_gaussian() {
        let s = ScenarioConfig::preset("mars_L1").unwrap();
        assert!(s.split_dims.is_empty());
        assert_eq!(s.components(), 1);
        let p = s.build_problem(None).unwrap();
        assert_eq!(p.components(), 1);
        assert_eq!(p.control_nodes(), 30);
    }

    #[test]
    fn mars_l243_preset() {
        assert_eq!(ScenarioConfig::preset("mars_L243").unwrap().components(), 243);
    }

    fn with(replace: &str, by: &str) -> Result<ScenarioConfig> {
        let text = preset_toml("mars_L27").unwrap();
        assert!(text.contains(replace));
        ScenarioConfig::from_toml_str(&text.replacen(replace, by, 1))
    }

    fn message(r: Result<ScenarioConfig>) -> String {
        r.unwrap_err().to_string()
    }

    #[test]
    fn negative_beta_names_field() {
        assert!(message(with("beta = 0.05", "beta = -0.05")).contains("beta"));
    }

    #[test]
    fn missing_field_names_field() {
        assert!(message(with("rho_u_kms = 0.76", "")).contains("rho_u_kms"));
    }

    #[test]
    fn indefinite_covariance_names_field() {
        assert!(message(with("position_var_du2 = 1e-4", "position_var_du2 = -1e-4")).contains("initial_covariance"));
    }

    #[test]
    fn bad_split_dims_named() {
        assert!(message(with("dims = [3, 4, 5]", "dims = [3, 3]")).contains("split.dims"));
        assert!(message(with("dims = [3, 4, 5]", "dims = [7]")).contains("split.dims"));
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(with("beta = 0.05", "beta = 0.05\nrho_u = 1.0").is_err());
    }

    #[test]
    fn unknown_preset_lists_known() {
        assert!(ScenarioConfig::resolve("mars_L9").is_err());
    }

    #[test]
    fn explicit_node_times() {
        let s = with("nodes = 31", "nodes = 3\nnode_times_days = [0.0, 100.0, 358.0]").unwrap();
        assert_eq!(s.control_nodes(), 2);
        assert!((s.node_times[1] - 100.0 / 58.0).abs() < 1e-15);
        assert!(with("nodes = 31", "nodes = 3\nnode_times_days = [0.0, 400.0, 358.0]").is_err());
    }
}
