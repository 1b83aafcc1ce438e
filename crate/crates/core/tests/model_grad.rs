//! Full-model gradient checks: the unrolled caption decoder (embedding,
//! feature projection, cell, output projection) against finite differences
//! for all three model kinds.

use bnrhn::cells::CellKind;
use bnrhn::training::tiny_model_grad_check;

#[test]
fn lstm_full_model_passes() {
    let report = tiny_model_grad_check(CellKind::Lstm, 1, 11, false).unwrap();
    assert!(report.pass, "{}", report.summary());
}

#[test]
fn coupled_full_model_passes_depths_1_to_3() {
    for depth in 1..=3 {
        let report = tiny_model_grad_check(CellKind::RhnCoupled, depth, 12, false).unwrap();
        assert!(report.pass, "depth {depth}: {}", report.summary());
    }
}

#[test]
fn decoupled_bn_full_model_passes_depths_1_to_3() {
    for depth in 1..=3 {
        let report = tiny_model_grad_check(CellKind::RhnDecoupledBn, depth, 13, false).unwrap();
        assert!(report.pass, "depth {depth}: {}", report.summary());
    }
}

#[test]
fn injected_fault_is_detected() {
    let report = tiny_model_grad_check(CellKind::RhnCoupled, 2, 14, true).unwrap();
    assert!(!report.pass, "corrupted gradient slipped through");
    assert_eq!(report.worst_param, "out_proj");
}

#[test]
fn reports_are_reproducible() {
    let a = tiny_model_grad_check(CellKind::RhnDecoupledBn, 2, 15, false).unwrap();
    let b = tiny_model_grad_check(CellKind::RhnDecoupledBn, 2, 15, false).unwrap();
    assert_eq!(a.max_rel_err.to_bits(), b.max_rel_err.to_bits());
    assert_eq!(a.worst_param, b.worst_param);
}
