//! Forward moment recursion (split → propagate → collapse → node update), the
//! affine control law's moment algebra, cost, and constraint evaluations.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{propagate_component, propagate_mixture, DynamicsModel};
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::linalg::{check_psd, max_eigenvalue, sym_eigenvalues, symmetrized};
use crate::policy::ControlPolicy;
use crate::split::{split_gaussian, SplitLibrary};

/// Per-node execution-error covariance `P_δuδu,k` (m×m).
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionErrorModel {
    pub cov: Vec<DMatrix<f64>>,
}

impl ExecutionErrorModel {
    pub fn zero(nodes: usize, control_dim: usize) -> Self {
        Self { cov: vec![DMatrix::zeros(control_dim, control_dim); nodes] }
    }

    pub fn constant(nodes: usize, cov: DMatrix<f64>) -> Result<Self> {
        check_psd(&cov).map_err(|e| Error::param("execution_error", e.to_string()))?;
        Ok(Self { cov: vec![symmetrized(cov); nodes] })
    }

    pub fn is_zero(&self) -> bool {
        self.cov.iter().all(|c| c.iter().all(|v| *v == 0.0))
    }
}

/// Parameters of the deterministic surrogate for `P(|u_k| ≤ ρ_u) ≥ 1 − β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChanceConstraintParams {
    /// Maximum control norm (VU).
    pub rho_u: f64,
    pub beta: f64,
    pub gamma: f64,
    pub control_dim: usize,
}

impl ChanceConstraintParams {
    pub fn new(rho_u: f64, beta: f64, gamma: f64, control_dim: usize) -> Result<Self> {
        let p = Self { rho_u, beta, gamma, control_dim };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::param("beta", format!("{} outside (0, 1]", self.beta)));
        }
        if !(self.gamma >= 1.0) {
            return Err(Error::param("gamma", format!("{} is below 1", self.gamma)));
        }
        if !(self.rho_u > 0.0) {
            return Err(Error::param("rho_u", format!("{} is not positive", self.rho_u)));
        }
        Ok(())
    }

    /// `√(2 ln(1/β)) + √m`.
    pub fn multiplier(&self) -> f64 {
        (2.0 * (1.0 / self.beta).ln()).sqrt() + (self.control_dim as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSpec {
    pub target: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl TerminalSpec {
    pub fn new(target: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != target.len() || cov.ncols() != target.len() {
            return Err(Error::Dimension("terminal covariance does not match target".into()));
        }
        check_psd(&cov).map_err(|e| Error::param("terminal covariance", e.to_string()))?;
        Ok(Self { target, cov: symmetrized(cov) })
    }
}

/// Node epochs `t_0 < … < t_K` (TU) and the control influence matrix `F_u` (n×m).
/// Controls act at `t_0 … t_{K−1}`; `t_K` is the terminal node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSchedule {
    pub times: Vec<f64>,
    pub control_map: DMatrix<f64>,
}

impl NodeSchedule {
    /// `nodes` uniformly spaced epochs including both ends.
    pub fn uniform(t0: f64, t_final: f64, nodes: usize, control_map: DMatrix<f64>) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::param("nodes", format!("{nodes} < 2")));
        }
        let step = (t_final - t0) / (nodes - 1) as f64;
        let times = (0..nodes).map(|k| if k == nodes - 1 { t_final } else { t0 + step * k as f64 }).collect();
        Self::from_times(times, control_map)
    }

    pub fn from_times(times: Vec<f64>, control_map: DMatrix<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::param("nodes", "need at least two epochs"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("times", "epochs must be strictly increasing"));
        }
        Ok(Self { times, control_map })
    }

    pub fn node_count(&self) -> usize {
        self.times.len()
    }

    /// Number of control nodes (all but the terminal one).
    pub fn control_nodes(&self) -> usize {
        self.times.len() - 1
    }

    pub fn control_dim(&self) -> usize {
        self.control_map.ncols()
    }
}

/// Moments recorded at one control node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMoments {
    /// State before the impulse (`k⁻`).
    pub prior: Gaussian,
    /// State after the impulse (`k⁺`).
    pub posterior: Gaussian,
    /// Control covariance `P_uu,k`.
    pub control_cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory {
    pub nodes: Vec<NodeMoments>,
    pub terminal: Gaussian,
}

/// Everything the forward recursion needs besides the policy.
#[derive(Debug, Clone)]
pub struct SteeringProblem {
    pub initial: Gaussian,
    pub dynamics: DynamicsModel,
    pub schedule: NodeSchedule,
    pub execution: ExecutionErrorModel,
    pub split_dims: Vec<usize>,
    pub library: SplitLibrary,
}

impl SteeringProblem {
    pub fn control_nodes(&self) -> usize {
        self.schedule.control_nodes()
    }

    pub fn state_dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.schedule.control_dim()
    }

    pub fn components(&self) -> usize {
        self.library.count().pow(self.split_dims.len() as u32)
    }
}

/// `m⁺ = m + F_u v`, `P⁺ = (I + F_u G) P (I + F_u G)ᵀ + F_u P_δu F_uᵀ`.
pub fn node_update(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    v: &DVector<f64>,
    gain: &DMatrix<f64>,
    control_map: &DMatrix<f64>,
    exec_cov: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = mean.len();
    let mean_plus = mean + control_map * v;
    let closed = DMatrix::identity(n, n) + control_map * gain;
    let cov_plus = &closed * cov * closed.transpose() + control_map * exec_cov * control_map.transpose();
    (mean_plus, symmetrized(cov_plus))
}

/// `P_uu = G P Gᵀ + P_δu`.
pub fn control_covariance(gain: &DMatrix<f64>, cov_minus: &DMatrix<f64>, exec_cov: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrized(gain * cov_minus * gain.transpose() + exec_cov)
}

/// `|v| + γ √λ_max(P_uu) (√(2 ln(1/β)) + √m) − ρ_u`; nonpositive when satisfied.
pub fn chance_constraint_value(
    v: &DVector<f64>,
    control_cov: &DMatrix<f64>,
    params: &ChanceConstraintParams,
) -> Result<f64> {
    params.validate()?;
    let spread = max_eigenvalue(control_cov).max(0.0).sqrt();
    Ok(v.norm() + params.gamma * spread * params.multiplier() - params.rho_u)
}

/// Terminal mean residual `m_N − x_f` and ascending eigenvalues of `P_f − P_N`.
pub fn terminal_constraint_residuals(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    spec: &TerminalSpec,
) -> (DVector<f64>, Vec<f64>) {
    let residual = mean - &spec.target;
    let eig = sym_eigenvalues(&symmetrized(&spec.cov - cov));
    (residual, eig)
}

/// `Σ v_kᵀ v_k`.
pub fn cost(policy: &ControlPolicy) -> f64 {
    policy.v.iter().map(|v| v.dot(v)).sum()
}

/// Gradient of [`cost`] with respect to each `v_k`; the gains do not enter the cost.
pub fn cost_gradient(policy: &ControlPolicy) -> Vec<DVector<f64>> {
    policy.v.iter().map(|v| v * 2.0).collect()
}

/// `Σ |v_k|`, the expected-control-norm form of the cost, for reporting.
pub fn cost_norm_sum(policy: &ControlPolicy) -> f64 {
    policy.v.iter().map(|v| v.norm()).sum()
}

/// Result of running the recursion from some node onward.
pub(crate) struct PartialPass {
    pub nodes: Vec<NodeMoments>,
    pub terminal: Gaussian,
    pub segments: usize,
}

/// Runs the recursion from control node `start` whose prior is `prior`.
pub(crate) fn forward_from(
    problem: &SteeringProblem,
    v: &[DVector<f64>],
    gains: &[DMatrix<f64>],
    start: usize,
    prior: Gaussian,
) -> Result<PartialPass> {
    let k_total = problem.control_nodes();
    let times = &problem.schedule.times;
    let fu = &problem.schedule.control_map;
    let mut nodes = Vec::with_capacity(k_total - start);
    let mut prior = prior;
    let mut segments = 0;
    for k in start..k_total {
        let exec = &problem.execution.cov[k];
        let control_cov = control_covariance(&gains[k], prior.cov(), exec);
        let (mp, pp) = node_update(prior.mean(), prior.cov(), &v[k], &gains[k], fu, exec);
        let posterior = Gaussian::from_parts(mp, pp);
        let next =
            propagate_segment(problem, &posterior, times[k], times[k + 1]).map_err(|e| Error::at_node(k + 1, e))?;
        segments += 1;
        nodes.push(NodeMoments { prior, posterior, control_cov });
        prior = next;
    }
    Ok(PartialPass { nodes, terminal: prior, segments })
}

/// Split, propagate each component and collapse over one inter-node segment.
pub fn propagate_segment(problem: &SteeringProblem, start: &Gaussian, t0: f64, t1: f64) -> Result<Gaussian> {
    propagate_split(&problem.dynamics, &problem.split_dims, &problem.library, start, t0, t1)
}

pub fn propagate_split(
    dynamics: &DynamicsModel,
    dims: &[usize],
    library: &SplitLibrary,
    start: &Gaussian,
    t0: f64,
    t1: f64,
) -> Result<Gaussian> {
    if dims.is_empty() {
        return Ok(propagate_component(start, t0, t1, dynamics)?.gaussian_out);
    }
    let mix = split_gaussian(start, dims, library)?;
    Ok(propagate_mixture(&mix, t0, t1, dynamics)?.collapse())
}

fn check_policy(policy: &ControlPolicy, problem: &SteeringProblem) -> Result<()> {
    policy.check_shape(problem.control_nodes(), problem.control_dim(), problem.state_dim())?;
    if problem.execution.cov.len() != problem.control_nodes() {
        return Err(Error::Dimension("execution error model length differs from control nodes".into()));
    }
    if problem.schedule.control_map.nrows() != problem.state_dim() {
        return Err(Error::Dimension("control map rows differ from state dimension".into()));
    }
    Ok(())
}

/// Full forward recursion from the initial Gaussian. Overwrites `policy.ref_means`
/// with the freshly computed prior means.
pub fn forward_pass(policy: &mut ControlPolicy, problem: &SteeringProblem) -> Result<MomentTrajectory> {
    check_policy(policy, problem)?;
    let pass = forward_from(problem, &policy.v, &policy.gains, 0, problem.initial.clone())?;
    for (r, node) in policy.ref_means.iter_mut().zip(&pass.nodes) {
        *r = node.prior.mean().clone();
    }
    Ok(MomentTrajectory { nodes: pass.nodes, terminal: pass.terminal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn fu() -> DMatrix<f64> {
        let mut f = DMatrix::zeros(6, 3);
        f.view_mut((3, 0), (3, 3)).fill_with_identity();
        f
    }

    fn spd6(seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        a.transpose() * a + DMatrix::identity(6, 6) * 0.1
    }

    #[test]
    fn node_update_without_feedback_shifts_mean_only() {
        let cov = spd6(1);
        let mean = DVector::from_element(6, 0.3);
        let v = dvector![0.1, -0.2, 0.3];
        let (m, p) = node_update(&mean, &cov, &v, &DMatrix::zeros(3, 6), &fu(), &DMatrix::zeros(3, 3));
        assert!((p - &cov).abs().max() < 1e-15);
        assert!((m - dvector![0.3, 0.3, 0.3, 0.4, 0.1, 0.6]).amax() < 1e-15);
    }

    #[test]
    fn node_update_adds_execution_error() {
        let cov = spd6(2);
        let c = dmatrix![1.0, 0.2, 0.0; 0.2, 2.0, 0.1; 0.0, 0.1, 3.0];
        let (_, p) = node_update(&DVector::zeros(6), &cov, &DVector::zeros(3), &DMatrix::zeros(3, 6), &fu(), &c);
        let expected = &cov + fu() * &c * fu().transpose();
        assert!((p - expected).abs().max() < 1e-14);
    }

    #[test]
    fn full_velocity_cancellation() {
        let cov = spd6(3);
        let mut gain = DMatrix::zeros(3, 6);
        gain.view_mut((0, 3), (3, 3)).copy_from(&(-DMatrix::<f64>::identity(3, 3)));
        let c = DMatrix::from_diagonal(&dvector![1e-6, 2e-6, 3e-6]);
        let (_, p) = node_update(&DVector::zeros(6), &cov, &DVector::zeros(3), &gain, &fu(), &c);
        // (I + F_u G) zeroes the velocity rows: velocity block is just the execution error.
        assert!((p.view((3, 3), (3, 3)) - &c).abs().max() < 1e-15);
        assert!((p.view((0, 0), (3, 3)) - cov.view((0, 0), (3, 3))).abs().max() < 1e-15);
        assert!(p.view((0, 3), (3, 3)).abs().max() < 1e-15);
    }

    #[test]
    fn control_covariance_cases() {
        let cov = spd6(4);
        let c = DMatrix::identity(3, 3) * 2e-5;
        assert_eq!(control_covariance(&DMatrix::zeros(3, 6), &cov, &c), c);
        let mut select = DMatrix::zeros(3, 6);
        select.view_mut((0, 3), (3, 3)).fill_with_identity();
        let puu = control_covariance(&select, &cov, &DMatrix::zeros(3, 3));
        assert!((puu - cov.view((3, 3), (3, 3))).abs().max() < 1e-15);
    }

    #[test]
    fn random_control_covariance_is_psd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for s in 0..100 {
            let g = DMatrix::from_fn(3, 6, |_, _| rng.gen_range(-2.0..2.0));
            let puu = control_covariance(&g, &spd6(100 + s), &DMatrix::zeros(3, 3));
            assert!(sym_eigenvalues(&puu)[0] >= -1e-12 * max_eigenvalue(&puu));
        }
    }

    #[test]
    fn chance_value_without_uncertainty() {
        let p = ChanceConstraintParams::new(0.025, 0.05, 1.0, 3).unwrap();
        let v = chance_constraint_value(&DVector::zeros(3), &DMatrix::zeros(3, 3), &p).unwrap();
        assert_eq!(v, -0.025);
    }

    #[test]
    fn chance_multiplier_arithmetic() {
        let p = ChanceConstraintParams::new(1.0, 0.05, 1.0, 3).unwrap();
        let expected = (2.0 * 20.0_f64.ln()).sqrt() + 3.0_f64.sqrt();
        assert!((p.multiplier() - expected).abs() < 1e-15);
        assert!((p.multiplier() - 4.179798).abs() < 1e-6);
        let puu = DMatrix::from_diagonal(&dvector![1e-4, 5e-5, 0.0]);
        let term = chance_constraint_value(&DVector::zeros(3), &puu, &p).unwrap() + 1.0;
        assert!((term - 0.0417980).abs() < 1e-6);
        let doubled = ChanceConstraintParams { gamma: 2.0, ..p };
        let term2 = chance_constraint_value(&DVector::zeros(3), &puu, &doubled).unwrap() + 1.0;
        assert_eq!(term2, 2.0 * term);
    }

    #[test]
    fn chance_rejects_bad_beta() {
        let p = ChanceConstraintParams { rho_u: 1.0, beta: 0.0, gamma: 1.0, control_dim: 3 };
        assert!(chance_constraint_value(&DVector::zeros(3), &DMatrix::zeros(3, 3), &p).is_err());
        assert!(ChanceConstraintParams::new(1.0, 1.5, 1.0, 3).is_err());
        assert!(ChanceConstraintParams::new(1.0, 0.05, 0.5, 3).is_err());
    }

    #[test]
    fn terminal_residual_cases() {
        let pf = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 1.0, 1.0, 1.0, 1.0]));
        let spec = TerminalSpec::new(DVector::zeros(6), pf.clone()).unwrap();
        let (r, e) = terminal_constraint_residuals(&DVector::from_element(6, 1.0), &pf, &spec);
        assert_eq!(r, DVector::from_element(6, 1.0));
        assert!(e.iter().all(|v| v.abs() < 1e-15));
        let (_, half) = terminal_constraint_residuals(&DVector::zeros(6), &(&pf * 0.5), &spec);
        assert!(half.iter().all(|v| *v > 0.0));
        let pn = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 1.0, 1.0, 1.0, 1.0]));
        let (_, e) = terminal_constraint_residuals(&DVector::zeros(6), &pn, &spec);
        assert!((e[0] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn cost_and_gradient() {
        let mut p = ControlPolicy::zeros(2, 3, 6);
        assert_eq!(cost(&p), 0.0);
        p.v[0] = dvector![1.0, 2.0, 3.0];
        assert_eq!(cost(&p), 14.0);
        assert_eq!(cost_gradient(&p)[0], dvector![2.0, 4.0, 6.0]);
        assert_eq!(cost_gradient(&p)[1], DVector::zeros(3));
    }

    #[test]
    fn uniform_schedule() {
        let s = NodeSchedule::uniform(0.0, 3.0, 4, fu()).unwrap();
        assert_eq!(s.times, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(s.control_nodes(), 3);
        assert!(NodeSchedule::uniform(0.0, 1.0, 1, fu()).is_err());
    }
}
