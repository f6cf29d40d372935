mod common;

use common::*;

fn assert_check(c: Check) {
    assert!(c.pass, "{}", c.detail);
}

#[test]
fn gradients_match_finite_differences() {
    assert_check(gradient_oracle(100, 1e-3, 11));
}

#[test]
fn search_matches_independent_replay() {
    assert_check(mcts_oracle());
}

#[test]
fn n_step_matches_scalar_reference() {
    assert_check(target_oracle(1000, 3));
}

#[test]
fn sim_rewards_come_from_the_environment() {
    assert_check(provenance_oracle(100, 17));
}

#[test]
fn weight_scaling_cases_and_invariance() {
    assert_check(scaling_oracle());
}

#[test]
fn real_only_weights_reduce_to_baseline_loss() {
    assert_check(baseline_oracle(20, 29));
}

#[test]
fn minigrid3_enumeration() {
    assert_check(minigrid_enumeration());
}

#[test]
fn minigrid3_uniform_mean_matches_enumeration() {
    // 10 * C(4,2) / 2^4
    let exact = 10.0 * 6.0 / 16.0;
    let mean = minigrid_uniform_mean(2000, 1);
    assert!((mean - exact).abs() < 0.3, "mean {mean}");
}
