//! Steering recursion, chance-constraint surrogate and optimizer behaviour on small problems.

mod common;

use common::{min_eigenvalue, spd_from, toy_chance, toy_problem, toy_terminal};
use gmsteer::dynamics::propagate_state;
use gmsteer::nlp::{self, Nlp, SolveStatus, SolverConfig, SteeringNlp};
use gmsteer::steering::{
    chance_constraint_value, control_covariance, cost, cost_gradient, forward_pass, ChanceConstraintParams,
};
use gmsteer::ControlPolicy;
use nalgebra::{DMatrix, DVector, Vector6};
use proptest::prelude::*;

#[test]
fn multiplier_for_five_percent_in_three_dimensions() {
    let params = ChanceConstraintParams::new(1.0, 0.05, 1.0, 3).unwrap();
    let expected = (2.0 * 20f64.ln()).sqrt() + 3f64.sqrt();
    assert!((params.multiplier() - expected).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn chance_value_is_monotone(
        v in prop::collection::vec(-1.0..1.0f64, 3),
        entries in prop::collection::vec(-0.3..0.3f64, 6),
        beta in 0.001..0.5f64,
        gamma in 1.0..3.0f64,
        grow in 1.01..3.0f64,
    ) {
        let v = DVector::from_vec(v);
        let cov = spd_from(&entries, 3, 1e-6);
        let base = ChanceConstraintParams::new(0.1, beta, gamma, 3).unwrap();
        let c0 = chance_constraint_value(&v, &cov, &base).unwrap();
        // Longer nominal impulse, wider spread, larger γ or smaller β all tighten the constraint.
        prop_assert!(chance_constraint_value(&(&v * grow), &cov, &base).unwrap() >= c0);
        prop_assert!(chance_constraint_value(&v, &(&cov * grow), &base).unwrap() > c0);
        let wider = ChanceConstraintParams { gamma: gamma * grow, ..base };
        prop_assert!(chance_constraint_value(&v, &cov, &wider).unwrap() > c0);
        let stricter = ChanceConstraintParams { beta: beta / grow, ..base };
        prop_assert!(chance_constraint_value(&v, &cov, &stricter).unwrap() > c0);
        let looser_bound = ChanceConstraintParams { rho_u: 0.1 * grow, ..base };
        prop_assert!(chance_constraint_value(&v, &cov, &looser_bound).unwrap() < c0);
        // Adding any PSD term to the control covariance never loosens the bound.
        let extra = spd_from(&entries[3..], 3, 0.0);
        prop_assert!(chance_constraint_value(&v, &(&cov + extra), &base).unwrap() >= c0 - 1e-15);
    }

    #[test]
    fn control_covariance_is_psd(
        gain in prop::collection::vec(-2.0..2.0f64, 18),
        entries in prop::collection::vec(-1.0..1.0f64, 21),
        exec in 0.0..1e-3f64,
    ) {
        let g = DMatrix::from_row_slice(3, 6, &gain);
        let p = spd_from(&entries, 6, 1e-8);
        let puu = control_covariance(&g, &p, &(DMatrix::identity(3, 3) * exec));
        prop_assert!(min_eigenvalue(&puu) >= -1e-12 * puu.amax().max(1e-300));
        prop_assert!(min_eigenvalue(&puu) >= exec - 1e-12 * puu.amax());
    }
}

#[test]
fn zero_policy_forward_pass_is_the_ballistic_arc() {
    let problem = toy_problem(4, vec![]);
    let mut policy = ControlPolicy::zeros(4, 3, 6);
    let traj = forward_pass(&mut policy, &problem).unwrap();
    let x0 = Vector6::from_column_slice(problem.initial.mean().as_slice());
    let x = propagate_state(&x0, 0.0, 0.8, &problem.dynamics).unwrap();
    assert!((traj.terminal.mean() - DVector::from_column_slice(x.as_slice())).amax() < 1e-9);
    for (k, node) in traj.nodes.iter().enumerate() {
        assert_eq!(&policy.ref_means[k], node.prior.mean());
        // Only the execution error drives the control covariance without feedback.
        assert!((&node.control_cov - DMatrix::identity(3, 3) * 1e-8).amax() < 1e-20);
    }
}

#[test]
fn velocity_feedback_shrinks_terminal_spread() {
    let problem = toy_problem(4, vec![3, 4, 5]);
    let mut open = ControlPolicy::zeros(4, 3, 6);
    let mut closed = ControlPolicy::zeros(4, 3, 6);
    for g in &mut closed.gains {
        g.view_mut((0, 3), (3, 3)).fill_with_identity();
        *g *= -0.5;
    }
    let a = forward_pass(&mut open, &problem).unwrap();
    let b = forward_pass(&mut closed, &problem).unwrap();
    assert!(b.terminal.cov().trace() < a.terminal.cov().trace());
}

#[test]
fn cost_gradient_matches_finite_differences() {
    let mut policy = ControlPolicy::zeros(4, 3, 6);
    for (k, v) in policy.v.iter_mut().enumerate() {
        *v = DVector::from_fn(3, |i, _| 0.01 * ((3 * k + i) as f64 + 1.0).sin());
    }
    let grad = cost_gradient(&policy);
    let h = 1e-7;
    for (k, g) in grad.iter().enumerate() {
        for (i, expected) in g.iter().enumerate() {
            let mut plus = policy.clone();
            let mut minus = policy.clone();
            plus.v[k][i] += h;
            minus.v[k][i] -= h;
            let fd = (cost(&plus) - cost(&minus)) / (2.0 * h);
            assert!((fd - expected).abs() < 1e-8, "node {k} axis {i}: {fd} vs {expected}");
        }
    }
}

#[test]
fn causal_and_full_restart_jacobians_agree_on_split_problem() {
    let problem = toy_problem(4, vec![4]);
    let nlp = SteeringNlp::new(&problem, toy_chance(0.05), toy_terminal(1e-3)).unwrap();
    let x = DVector::from_fn(nlp.dim(), |i, _| 0.05 * ((i as f64) * 1.3).cos());
    let base = nlp.evaluate(&x).unwrap();
    let causal = nlp.jacobian_fd(&x, &base, true).unwrap();
    let naive = nlp.jacobian_fd(&x, &base, false).unwrap();
    assert!((causal - naive).amax() <= 1e-9);
}

/// With a loose terminal covariance and a generous control bound only the mean
/// constraint binds, so the optimum is the minimum-norm impulse sequence that reaches
/// the target.
#[test]
fn loose_bounds_reduce_to_minimum_norm_shooting() {
    let problem = toy_problem(4, vec![]);
    let terminal = toy_terminal(1.0);
    let guess = ControlPolicy::zeros(4, 3, 6);
    let config = SolverConfig { optimality_tol: 1e-8, ..SolverConfig::default() };
    let (policy, traj, report) = nlp::solve(&problem, toy_chance(1.0), terminal.clone(), &guess, &config).unwrap();
    assert_eq!(report.status, SolveStatus::Converged, "{report:?}");
    assert!((traj.terminal.mean() - &terminal.target).amax() < 1e-8);

    // Sensitivity of the terminal mean to each impulse, from the ballistic propagator alone.
    let times = &problem.schedule.times;
    let ballistic = |v: &[DVector<f64>]| {
        let mut x = Vector6::from_column_slice(problem.initial.mean().as_slice());
        for k in 0..4 {
            for i in 0..3 {
                x[3 + i] += v[k][i];
            }
            x = propagate_state(&x, times[k], times[k + 1], &problem.dynamics).unwrap();
        }
        x
    };
    let h = 1e-7;
    let mut jac = DMatrix::zeros(6, 12);
    for j in 0..12 {
        let mut plus = policy.v.clone();
        let mut minus = policy.v.clone();
        plus[j / 3][j % 3] += h;
        minus[j / 3][j % 3] -= h;
        jac.set_column(j, &((ballistic(&plus) - ballistic(&minus)) / (2.0 * h)));
    }
    // Stationarity: the stacked impulses lie in the row space of the sensitivity.
    let v = DVector::from_iterator(12, policy.v.iter().flat_map(|v| v.iter().copied()));
    let pinv = jac.clone().pseudo_inverse(1e-12).unwrap();
    let projected = &v - &pinv * (&jac * &v);
    assert!(projected.norm() < 1e-6 * v.norm(), "null-space component {}", projected.norm());
}

#[test]
fn tight_terminal_covariance_needs_feedback() {
    let problem = toy_problem(4, vec![]);
    let mut open = ControlPolicy::zeros(4, 3, 6);
    let ballistic = forward_pass(&mut open, &problem).unwrap();
    let required = ballistic.terminal.cov().clone() * 0.5;
    let terminal =
        gmsteer::steering::TerminalSpec::new(DVector::from_vec(vec![0.7, 0.7, 0.0, -0.7, 0.7, 0.0]), required).unwrap();
    let (policy, traj, report) = nlp::solve(
        &problem,
        toy_chance(1.0),
        terminal.clone(),
        &ControlPolicy::zeros(4, 3, 6),
        &SolverConfig::default(),
    )
    .unwrap();
    assert_eq!(report.status, SolveStatus::Converged);
    assert!(min_eigenvalue(&(&terminal.cov - traj.terminal.cov())) >= -1e-8 * terminal.cov.amax());
    assert!(policy.gains.iter().any(|g| g.amax() > 1e-3));
}
