//! Autodiff gradients of every training objective against central finite
//! differences.

mod common;

use common::grads::{self, TOL};

fn assert_small(cases: Vec<(String, f64)>) {
    for (label, e) in cases {
        assert!(e < TOL, "{label}: rel err {e}");
    }
}

#[test]
fn rpp_log_likelihood() {
    assert_small(grads::rpp_log_likelihood());
}

#[test]
fn ns_losses_all_families() {
    assert_small(grads::ns_losses_all_families());
}

#[test]
fn adversarial_critic_objective() {
    assert_small(grads::adversarial_critic_objective());
}

#[test]
fn adversarial_generator_objective() {
    assert_small(grads::adversarial_generator_objective());
}

#[test]
fn mempool_objectives() {
    assert_small(grads::mempool_objectives());
}
