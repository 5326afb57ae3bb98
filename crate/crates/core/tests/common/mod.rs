#![allow(dead_code)]

use gmsteer::dynamics::DynamicsModel;
use gmsteer::steering::{ChanceConstraintParams, ExecutionErrorModel, NodeSchedule, SteeringProblem, TerminalSpec};
use gmsteer::{Gaussian, SplitLibrary};
use nalgebra::{DMatrix, DVector};

/// Velocity-impulse control map.
pub fn velocity_map() -> DMatrix<f64> {
    let mut fu = DMatrix::zeros(6, 3);
    fu.view_mut((3, 0), (3, 3)).fill_with_identity();
    fu
}

/// Short arc of a unit circular orbit with `nodes` control nodes.
pub fn toy_problem(nodes: usize, split_dims: Vec<usize>) -> SteeringProblem {
    let mean = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-4, 1e-4, 1e-4, 1e-6, 1e-6, 1e-6]));
    SteeringProblem {
        initial: Gaussian::new(mean, cov).unwrap(),
        dynamics: DynamicsModel::two_body(1.0).unwrap(),
        schedule: NodeSchedule::uniform(0.0, 0.8, nodes + 1, velocity_map()).unwrap(),
        execution: ExecutionErrorModel::constant(nodes, DMatrix::identity(3, 3) * 1e-8).unwrap(),
        split_dims,
        library: SplitLibrary::table_l3(),
    }
}

pub fn toy_chance(rho_u: f64) -> ChanceConstraintParams {
    ChanceConstraintParams::new(rho_u, 0.05, 1.0, 3).unwrap()
}

pub fn toy_terminal(cov_scale: f64) -> TerminalSpec {
    let target = DVector::from_vec(vec![0.7, 0.7, 0.0, -0.7, 0.7, 0.0]);
    TerminalSpec::new(target, DMatrix::identity(6, 6) * cov_scale).unwrap()
}

/// Random symmetric positive definite matrix `L Lᵀ + εI` from unconstrained entries.
pub fn spd_from(entries: &[f64], n: usize, eps: f64) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] = entries[k % entries.len()];
            k += 1;
        }
    }
    let p = &l * l.transpose() + DMatrix::identity(n, n) * eps;
    (&p + p.transpose()) * 0.5
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone().symmetric_eigen().eigenvalues.min()
}
