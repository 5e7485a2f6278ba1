mod common;

use apan::train::LossKind;
use common::link_gradient_error;

#[test]
fn full_link_loss_matches_finite_differences() {
    let err = link_gradient_error(LossKind::Mlp, 1);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn dot_objective_matches_finite_differences() {
    let err = link_gradient_error(LossKind::Dot, 2);
    assert!(err < 1e-4, "max relative error {err}");
}
