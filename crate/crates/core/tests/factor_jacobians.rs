//! Analytic factor Jacobians against central finite differences.

mod common;

#[test]
fn visual_and_depth_jacobians_match_finite_differences() {
    let (visual, depth) = common::visual_depth_jacobian_error(100);
    assert!(visual < 1e-4, "visual: relative error {visual:e}");
    assert!(depth < 1e-4, "depth: relative error {depth:e}");
}

#[test]
fn prior_jacobian_matches_finite_differences() {
    let worst = common::prior_jacobian_error(100);
    assert!(worst < 1e-4, "relative error {worst:e}");
}
