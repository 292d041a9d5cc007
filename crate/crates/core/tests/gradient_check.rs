//! Analytic gradients against central finite differences on reduced networks.

mod common;
use common::gradcheck::MAX_RELATIVE_ERROR;

#[test]
fn classifier_gradients_match_finite_differences() {
    for (name, worst) in common::classifier_gradient_errors() {
        println!("classifier {name}: max relative error {worst:.2e}");
        assert!(worst <= MAX_RELATIVE_ERROR, "{name}: {worst}");
    }
}

#[test]
fn detector_gradients_match_finite_differences() {
    for (name, worst) in common::detector_gradient_errors() {
        println!("detector {name}: max relative error {worst:.2e}");
        assert!(worst <= MAX_RELATIVE_ERROR, "{name}: {worst}");
    }
}
