use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{Nlp, Point};
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::linalg::{inverse_sqrt, sym_eigenvalues, symmetrized};
use crate::policy::ControlPolicy;
use crate::steering::{
    chance_constraint_value, forward_from, forward_pass, ChanceConstraintParams, MomentTrajectory, NodeMoments,
    SteeringProblem, TerminalSpec,
};

pub type SteeringPoint = Point<MomentTrajectory>;

/// The steering problem seen as an NLP.
///
/// Decision layout: every `v_k` stacked (divided by `ρ_u` so the entries are O(1)),
/// then every `G_k` row-major. The objective is `Σ|v_k|²/ρ_u²`. Constraints, in order:
///
/// * terminal mean residual `m_N − x_f` (6 equalities, DU/VU);
/// * one chance constraint per control node, divided by `ρ_u`;
/// * the square roots of the ascending eigenvalues of `P_f^{-1/2} P_N P_f^{-1/2}` minus
///   one, all nonpositive exactly when `P_f − P_N` is positive semidefinite. The square
///   root keeps the rows close to linear in the gains.
pub struct SteeringNlp<'a> {
    problem: &'a SteeringProblem,
    chance: ChanceConstraintParams,
    terminal: TerminalSpec,
    whiten: DMatrix<f64>,
    gain_bound: Option<f64>,
    causal: bool,
    central: AtomicBool,
    segments: AtomicUsize,
}

impl<'a> SteeringNlp<'a> {
    pub fn new(problem: &'a SteeringProblem, chance: ChanceConstraintParams, terminal: TerminalSpec) -> Result<Self> {
        chance.validate()?;
        let n = problem.state_dim();
        if terminal.target.len() != n || terminal.cov.nrows() != n {
            return Err(Error::Dimension("terminal spec does not match the state dimension".into()));
        }
        if chance.control_dim != problem.control_dim() {
            return Err(Error::Dimension("chance constraint control dimension differs from the control map".into()));
        }
        let whiten = inverse_sqrt(&terminal.cov)
            .map_err(|_| Error::param("terminal covariance", "must be positive definite"))?;
        Ok(Self {
            problem,
            chance,
            terminal,
            whiten,
            gain_bound: None,
            causal: true,
            central: AtomicBool::new(false),
            segments: AtomicUsize::new(0),
        })
    }

    pub fn with_gain_bound(mut self, bound: Option<f64>) -> Self {
        self.gain_bound = bound;
        self
    }

    /// Chooses between causal restarts and full restarts for Jacobian columns.
    pub fn with_causal_jacobian(mut self, causal: bool) -> Self {
        self.causal = causal;
        self
    }

    pub fn problem(&self) -> &SteeringProblem {
        self.problem
    }

    pub fn chance(&self) -> &ChanceConstraintParams {
        &self.chance
    }

    pub fn terminal(&self) -> &TerminalSpec {
        &self.terminal
    }

    /// Segment propagations performed so far.
    pub fn segment_count(&self) -> usize {
        self.segments.load(Ordering::Relaxed)
    }

    pub fn reset_segment_count(&self) {
        self.segments.store(0, Ordering::Relaxed);
    }

    fn nodes(&self) -> usize {
        self.problem.control_nodes()
    }

    fn m(&self) -> usize {
        self.problem.control_dim()
    }

    fn n(&self) -> usize {
        self.problem.state_dim()
    }

    fn v_len(&self) -> usize {
        self.nodes() * self.m()
    }

    /// Control node whose variables include entry `j`.
    pub fn node_of(&self, j: usize) -> usize {
        if j < self.v_len() {
            j / self.m()
        } else {
            (j - self.v_len()) / (self.m() * self.n())
        }
    }

    pub fn pack(&self, policy: &ControlPolicy) -> Result<DVector<f64>> {
        policy.check_shape(self.nodes(), self.m(), self.n())?;
        let (m, n) = (self.m(), self.n());
        let mut x = DVector::zeros(self.dim());
        for (k, v) in policy.v.iter().enumerate() {
            for i in 0..m {
                x[k * m + i] = v[i] / self.chance.rho_u;
            }
        }
        for (k, g) in policy.gains.iter().enumerate() {
            for i in 0..m {
                for j in 0..n {
                    x[self.v_len() + k * m * n + i * n + j] = g[(i, j)];
                }
            }
        }
        Ok(x)
    }

    fn split(&self, x: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
        let (m, n) = (self.m(), self.n());
        let v = (0..self.nodes()).map(|k| DVector::from_fn(m, |i, _| x[k * m + i] * self.chance.rho_u)).collect();
        let g =
            (0..self.nodes()).map(|k| DMatrix::from_fn(m, n, |i, j| x[self.v_len() + k * m * n + i * n + j])).collect();
        (v, g)
    }

    /// Policy with physical units; reference means are left at zero until a forward pass.
    pub fn unpack(&self, x: &DVector<f64>) -> ControlPolicy {
        let (v, gains) = self.split(x);
        let mut policy = ControlPolicy::zeros(self.nodes(), self.m(), self.n());
        policy.v = v;
        policy.gains = gains;
        policy
    }

    /// Policy at `x` with reference means filled in, plus its trajectory.
    pub fn policy_at(&self, x: &DVector<f64>) -> Result<(ControlPolicy, MomentTrajectory)> {
        let mut policy = self.unpack(x);
        let traj = forward_pass(&mut policy, self.problem)?;
        Ok((policy, traj))
    }

    /// Writes the chance rows of node `k` into `c`.
    fn chance_rows(&self, k: usize, v: &DVector<f64>, node: &NodeMoments, c: &mut DVector<f64>) -> Result<()> {
        c[self.n() + k] = chance_constraint_value(v, &node.control_cov, &self.chance)? / self.chance.rho_u;
        Ok(())
    }

    fn terminal_rows(&self, terminal: &Gaussian, c: &mut DVector<f64>) {
        let n = self.n();
        for i in 0..n {
            c[i] = terminal.mean()[i] - self.terminal.target[i];
        }
        let scaled = symmetrized(&self.whiten * terminal.cov() * &self.whiten);
        let off = n + self.nodes();
        for (i, e) in sym_eigenvalues(&scaled).into_iter().enumerate() {
            c[off + i] = e.max(0.0).sqrt() - 1.0;
        }
    }

    fn constraints(&self, v: &[DVector<f64>], nodes: &[NodeMoments], terminal: &Gaussian) -> Result<DVector<f64>> {
        let mut c = DVector::zeros(self.n_eq() + self.n_ineq());
        self.terminal_rows(terminal, &mut c);
        for (k, node) in nodes.iter().enumerate() {
            self.chance_rows(k, &v[k], node, &mut c)?;
        }
        Ok(c)
    }

    /// Constraint values at `x + h e_j`, restarting the recursion at `start`.
    fn perturbed(
        &self,
        x: &DVector<f64>,
        j: usize,
        h: f64,
        start: usize,
        base: &SteeringPoint,
    ) -> Result<DVector<f64>> {
        let mut xp = x.clone();
        xp[j] += h;
        let (v, g) = self.split(&xp);
        let prior = if start == 0 { self.problem.initial.clone() } else { base.cache.nodes[start].prior.clone() };
        let pass = forward_from(self.problem, &v, &g, start, prior)?;
        self.segments.fetch_add(pass.segments, Ordering::Relaxed);
        let mut c = base.constraints.clone();
        self.terminal_rows(&pass.terminal, &mut c);
        for (offset, node) in pass.nodes.iter().enumerate() {
            let k = start + offset;
            self.chance_rows(k, &v[k], node, &mut c)?;
        }
        Ok(c)
    }

    fn column(&self, x: &DVector<f64>, j: usize, base: &SteeringPoint, causal: bool) -> Result<DVector<f64>> {
        let start = if causal { self.node_of(j) } else { 0 };
        if self.central.load(Ordering::Relaxed) {
            let h = 6e-6 * x[j].abs().max(1.0);
            if let (Ok(plus), Ok(minus)) = (self.perturbed(x, j, h, start, base), self.perturbed(x, j, -h, start, base))
            {
                return Ok((plus - minus) / (2.0 * h));
            }
        }
        let h = 1e-6 * x[j].abs().max(1.0);
        match self.perturbed(x, j, h, start, base) {
            Ok(c) => Ok((c - &base.constraints) / h),
            Err(_) => {
                let c = self.perturbed(x, j, -h, start, base)?;
                Ok((&base.constraints - c) / h)
            }
        }
    }

    /// Uses central differences for every later Jacobian.
    pub fn use_central_differences(&self) {
        self.central.store(true, Ordering::Relaxed);
    }

    /// Finite-difference constraint Jacobian (forward differences until
    /// [`Nlp::refine_derivatives`] switches to central ones); `causal` restarts each
    /// column at its node.
    pub fn jacobian_fd(&self, x: &DVector<f64>, base: &SteeringPoint, causal: bool) -> Result<DMatrix<f64>> {
        let cols: Vec<DVector<f64>> =
            (0..self.dim()).into_par_iter().map(|j| self.column(x, j, base, causal)).collect::<Result<_>>()?;
        Ok(DMatrix::from_columns(&cols))
    }
}

impl Nlp for SteeringNlp<'_> {
    type Cache = MomentTrajectory;

    fn dim(&self) -> usize {
        self.v_len() + self.nodes() * self.m() * self.n()
    }

    fn n_eq(&self) -> usize {
        self.n()
    }

    fn n_ineq(&self) -> usize {
        self.nodes() + self.n()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<SteeringPoint> {
        let (v, g) = self.split(x);
        let pass = forward_from(self.problem, &v, &g, 0, self.problem.initial.clone())?;
        self.segments.fetch_add(pass.segments, Ordering::Relaxed);
        let constraints = self.constraints(&v, &pass.nodes, &pass.terminal)?;
        let v_len = self.v_len();
        let objective = x.rows(0, v_len).norm_squared();
        let gradient = DVector::from_fn(x.len(), |i, _| if i < v_len { 2.0 * x[i] } else { 0.0 });
        let cache = MomentTrajectory { nodes: pass.nodes, terminal: pass.terminal };
        Ok(Point { objective, gradient, constraints, cache })
    }

    fn jacobian(&self, x: &DVector<f64>, at: &SteeringPoint) -> Result<DMatrix<f64>> {
        self.jacobian_fd(x, at, self.causal)
    }

    fn refine_derivatives(&self) -> bool {
        !self.central.swap(true, Ordering::Relaxed)
    }

    fn cost_scale(&self) -> f64 {
        self.chance.rho_u * self.chance.rho_u
    }

    fn bounds(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        let b = self.gain_bound?;
        let v_len = self.v_len();
        let lo = DVector::from_fn(self.dim(), |i, _| if i < v_len { f64::NEG_INFINITY } else { -b });
        let hi = DVector::from_fn(self.dim(), |i, _| if i < v_len { f64::INFINITY } else { b });
        Some((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicsModel;
    use crate::split::SplitLibrary;
    use crate::steering::{ExecutionErrorModel, NodeSchedule};

    fn toy_problem(split_dims: Vec<usize>) -> SteeringProblem {
        let mut fu = DMatrix::zeros(6, 3);
        fu.view_mut((3, 0), (3, 3)).fill_with_identity();
        let mean = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-4, 1e-4, 1e-4, 1e-6, 1e-6, 1e-6]));
        SteeringProblem {
            initial: Gaussian::new(mean, cov).unwrap(),
            dynamics: DynamicsModel::two_body(1.0).unwrap(),
            schedule: NodeSchedule::uniform(0.0, 0.8, 5, fu).unwrap(),
            execution: ExecutionErrorModel::constant(4, DMatrix::identity(3, 3) * 1e-8).unwrap(),
            split_dims,
            library: SplitLibrary::table_l3(),
        }
    }

    fn toy_nlp(problem: &SteeringProblem) -> SteeringNlp<'_> {
        let chance = ChanceConstraintParams::new(0.05, 0.05, 1.0, 3).unwrap();
        let target = DVector::from_vec(vec![0.7, 0.7, 0.0, -0.7, 0.7, 0.0]);
        let terminal = TerminalSpec::new(target, DMatrix::identity(6, 6) * 1e-3).unwrap();
        SteeringNlp::new(problem, chance, terminal).unwrap()
    }

    fn sample_x(nlp: &SteeringNlp) -> DVector<f64> {
        DVector::from_fn(nlp.dim(), |i, _| 0.1 * ((i as f64) * 0.7).sin())
    }

    #[test]
    fn pack_unpack_round_trip() {
        let problem = toy_problem(vec![]);
        let nlp = toy_nlp(&problem);
        let x = sample_x(&nlp);
        let policy = nlp.unpack(&x);
        assert!((policy.v[1][2] - x[5] * 0.05).abs() < 1e-15);
        assert_eq!(policy.gains[2][(1, 4)], x[12 + 2 * 18 + 6 + 4]);
        assert!((nlp.pack(&policy).unwrap() - &x).amax() < 1e-16);
        assert_eq!(nlp.node_of(11), 3);
        assert_eq!(nlp.node_of(12 + 18), 1);
    }

    #[test]
    fn layout_and_objective() {
        let problem = toy_problem(vec![]);
        let nlp = toy_nlp(&problem);
        assert_eq!(nlp.dim(), 4 * 3 + 4 * 18);
        assert_eq!((nlp.n_eq(), nlp.n_ineq()), (6, 4 + 6));
        let x = sample_x(&nlp);
        let p = nlp.evaluate(&x).unwrap();
        assert_eq!(p.constraints.len(), 16);
        // Objective in scaled units times ρ_u² is the physical cost.
        let physical = crate::steering::cost(&nlp.unpack(&x));
        assert!((p.objective * nlp.cost_scale() - physical).abs() < 1e-15);
        let h = 1e-6;
        for j in [0, 5, 11, 20] {
            let mut xp = x.clone();
            xp[j] += h;
            let fd = (nlp.evaluate(&xp).unwrap().objective - p.objective) / h;
            assert!((fd - p.gradient[j]).abs() < 1e-5, "column {j}: {fd} vs {}", p.gradient[j]);
        }
    }

    #[test]
    fn terminal_rows_measure_covariance_margin() {
        let problem = toy_problem(vec![]);
        let nlp = toy_nlp(&problem);
        let mut c = DVector::zeros(16);
        let at_target = Gaussian::new(nlp.terminal().target.clone(), nlp.terminal().cov.clone()).unwrap();
        nlp.terminal_rows(&at_target, &mut c);
        assert!(c.rows(0, 6).amax() == 0.0);
        assert!(c.rows(10, 6).iter().all(|v| v.abs() < 1e-12));
        let quarter = Gaussian::new(nlp.terminal().target.clone(), &nlp.terminal().cov * 0.25).unwrap();
        nlp.terminal_rows(&quarter, &mut c);
        assert!(c.rows(10, 6).iter().all(|v| (v + 0.5).abs() < 1e-12));
    }

    #[test]
    fn causal_jacobian_matches_full_restarts() {
        let problem = toy_problem(vec![3]);
        let nlp = toy_nlp(&problem);
        let x = sample_x(&nlp);
        let p = nlp.evaluate(&x).unwrap();
        nlp.reset_segment_count();
        let causal = nlp.jacobian_fd(&x, &p, true).unwrap();
        let causal_segments = nlp.segment_count();
        nlp.reset_segment_count();
        let full = nlp.jacobian_fd(&x, &p, false).unwrap();
        let full_segments = nlp.segment_count();
        assert!((&causal - &full).amax() <= 1e-9);
        assert!(causal_segments < full_segments, "{causal_segments} vs {full_segments}");
        // Columns of node k cost K − k segments each.
        let per_node = 3 + 18;
        assert_eq!(causal_segments, per_node * (4 + 3 + 2 + 1));
        assert_eq!(full_segments, per_node * 4 * 4);
    }

    #[test]
    fn later_controls_leave_earlier_chance_rows_alone() {
        let problem = toy_problem(vec![3]);
        let nlp = toy_nlp(&problem);
        let x = sample_x(&nlp);
        let p = nlp.evaluate(&x).unwrap();
        let jac = nlp.jacobian_fd(&x, &p, true).unwrap();
        // Columns 9..12 hold v_3; chance rows 6..9 belong to nodes 0..2.
        for j in 9..12 {
            for row in 6..9 {
                assert_eq!(jac[(row, j)], 0.0);
            }
            assert!(jac[(9, j)] != 0.0);
        }
    }

    #[test]
    fn gain_bounds_only_cover_gains() {
        let problem = toy_problem(vec![]);
        let nlp = toy_nlp(&problem).with_gain_bound(Some(2.0));
        let (lo, hi) = nlp.bounds().unwrap();
        assert!(lo[11].is_infinite() && hi[11].is_infinite());
        assert_eq!((lo[12], hi[12]), (-2.0, 2.0));
        assert!(toy_nlp(&problem).bounds().is_none());
    }
}
