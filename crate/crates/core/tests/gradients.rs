mod common;

use common::{joint_model_gradient, primitive_error, GRAD_TOL, PRIMITIVES};

fn assert_passes(names: &[&str]) {
    for name in names {
        let err = primitive_error(name);
        assert!(err < GRAD_TOL, "{name}: max relative error {err:e}");
    }
}

#[test]
fn matmul_both_sides() {
    assert_passes(&["matmul lhs", "matmul rhs"]);
}

#[test]
fn elementwise_ops() {
    assert_passes(&["add", "sub", "mul", "scale", "relu"]);
}

#[test]
fn bias_and_sum() {
    assert_passes(&["add_bias input", "add_bias bias", "sum"]);
}

#[test]
fn softmax_both_axes() {
    assert_passes(&["softmax rows", "softmax columns"]);
}

#[test]
fn layer_norm_all_inputs() {
    assert_passes(&["layer_norm input", "layer_norm gain", "layer_norm bias"]);
}

#[test]
fn attention_unmasked() {
    assert_passes(&["attention query", "attention key", "attention value", "attention two heads"]);
}

#[test]
fn attention_masked() {
    assert_passes(&["masked attention query", "masked attention key", "masked attention value"]);
}

#[test]
fn embedding_and_unfold() {
    assert_passes(&["embedding", "unfold"]);
}

#[test]
fn cross_entropy_with_and_without_smoothing() {
    assert_passes(&["cross_entropy", "smoothed cross_entropy"]);
}

#[test]
fn composite_block() {
    assert_passes(&["residual block"]);
}

#[test]
fn full_joint_model_loss() {
    let (coords, worst, at) = joint_model_gradient();
    assert!(coords > 1000, "{coords}");
    assert!(worst < GRAD_TOL, "{at}: {worst:e}");
}

#[test]
fn named_cases_are_all_known() {
    assert_passes(PRIMITIVES);
}
