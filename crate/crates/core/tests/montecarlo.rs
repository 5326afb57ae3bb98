//! Monte Carlo harness: reproducibility, agreement with the moment recursion and the
//! effect of feedback on dispersion.

mod common;

use common::toy_problem;
use gmsteer::montecarlo::{self, mean_and_standard_error, McConfig};
use gmsteer::steering::forward_pass;
use gmsteer::ControlPolicy;
use nalgebra::{DMatrix, Vector6};

fn feedback_policy(problem: &gmsteer::steering::SteeringProblem, gain: f64) -> ControlPolicy {
    let mut policy = ControlPolicy::zeros(4, 3, 6);
    for (k, v) in policy.v.iter_mut().enumerate() {
        v[0] = 0.002 * (k as f64 + 1.0);
    }
    for g in &mut policy.gains {
        g.view_mut((0, 3), (3, 3)).fill_with_identity();
        *g *= -gain;
    }
    forward_pass(&mut policy, problem).unwrap();
    policy
}

fn sample_cov(states: &[Vector6<f64>]) -> DMatrix<f64> {
    let n = states.len() as f64;
    let mean: Vector6<f64> = states.iter().sum::<Vector6<f64>>() / n;
    let mut cov = DMatrix::zeros(6, 6);
    for s in states {
        let d = s - mean;
        cov += DMatrix::from_column_slice(6, 1, d.as_slice()) * DMatrix::from_row_slice(1, 6, d.as_slice());
    }
    cov / (n - 1.0)
}

#[test]
fn same_seed_same_samples() {
    let problem = toy_problem(4, vec![]);
    let policy = feedback_policy(&problem, 0.5);
    let config = McConfig { samples: 64, seed: 9, process_noise: false, execution_error: true };
    let a = montecarlo::run(&policy, &problem, &config).unwrap();
    let b = montecarlo::run(&policy, &problem, &config).unwrap();
    assert_eq!(a.samples, b.samples);
    let c = montecarlo::run(&policy, &problem, &McConfig { seed: 10, ..config }).unwrap();
    assert_ne!(a.terminal_states(), c.terminal_states());
    // Sample i draws from its own stream, so a shorter run is a prefix of a longer one.
    let short = montecarlo::run(&policy, &problem, &McConfig { samples: 16, ..config }).unwrap();
    assert_eq!(short.samples[..], a.samples[..16]);
}

#[test]
fn terminal_moments_agree_with_the_recursion() {
    let problem = toy_problem(4, vec![]);
    let mut policy = feedback_policy(&problem, 0.5);
    let traj = forward_pass(&mut policy, &problem).unwrap();
    let config = McConfig { samples: 4000, seed: 3, process_noise: false, execution_error: true };
    let mc = montecarlo::run(&policy, &problem, &config).unwrap();
    assert!(mc.flagged.is_empty());
    let states = mc.terminal_states();
    let (mean, se) = mean_and_standard_error(&states);
    for i in 0..6 {
        let err = (mean[i] - traj.terminal.mean()[i]).abs();
        assert!(err <= 4.0 * se[i], "axis {i}: error {err} exceeds 4 standard errors {}", 4.0 * se[i]);
    }
    // Sample variances within 15% of the linearized prediction.
    let cov = sample_cov(&states);
    for i in 0..6 {
        let predicted = traj.terminal.cov()[(i, i)];
        let rel = (cov[(i, i)] - predicted).abs() / predicted;
        assert!(rel < 0.15, "axis {i}: variance {} vs predicted {predicted}", cov[(i, i)]);
    }
}

#[test]
fn feedback_reduces_dispersion() {
    let problem = toy_problem(4, vec![]);
    let open = feedback_policy(&problem, 0.0);
    let closed = feedback_policy(&problem, 0.8);
    let config = McConfig { samples: 1000, seed: 5, process_noise: false, execution_error: false };
    let spread = |p: &ControlPolicy| {
        let states = montecarlo::run(p, &problem, &config).unwrap().terminal_states();
        sample_cov(&states).trace()
    };
    assert!(spread(&closed) < spread(&open));
}

#[test]
fn open_loop_controls_are_the_nominal_impulses() {
    let problem = toy_problem(4, vec![]);
    let policy = feedback_policy(&problem, 0.0);
    let config = McConfig { samples: 8, seed: 1, process_noise: false, execution_error: false };
    let mc = montecarlo::run(&policy, &problem, &config).unwrap();
    for (_, s) in &mc.samples {
        for (u, v) in s.controls.iter().zip(&policy.v) {
            assert_eq!(u, v);
        }
    }
}
