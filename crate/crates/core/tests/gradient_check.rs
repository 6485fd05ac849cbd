mod common;

use common::gradcheck::run_instance;

#[test]
fn smoothed_backward_matches_central_differences() {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let out = run_instance(seed, 1e-3);
        assert!(out.nonzero > 0, "seed {seed}: no gradient signal");
        worst = worst.max(out.norm_rel_err);
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn elementwise_errors_are_small_where_gradients_are_large() {
    for seed in 0..20 {
        let out = run_instance(seed, 1e-2);
        assert!(out.max_rel_err < 1e-4, "seed {seed}: {:e}", out.max_rel_err);
    }
}
