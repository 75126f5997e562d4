//! Parameter gradients of every loss term and input derivatives of the
//! network, checked against central finite differences.

mod common;

use common::{check_jets, check_term};
use qpinn::losses::LossTerm;

fn check(term: LossTerm) {
    let checked = check_term(term).unwrap_or_else(|e| panic!("{e}"));
    assert!(checked > 0);
}

#[test]
fn integral_gradient() {
    check(LossTerm::Integral);
}

#[test]
fn normalization_gradient() {
    check(LossTerm::Normalization);
}

#[test]
fn boundary_gradient() {
    check(LossTerm::Boundary);
}

#[test]
fn periodicity_gradient() {
    check(LossTerm::Periodicity);
}

#[test]
fn symmetry_gradient() {
    check(LossTerm::Symmetry);
}

#[test]
fn equal_norm_gradient() {
    check(LossTerm::EqualNorm);
}

#[test]
fn energy_min_gradient() {
    check(LossTerm::EnergyMin);
}

#[test]
fn orthogonality_gradient() {
    check(LossTerm::Orthogonality);
}

#[test]
fn pde_gradient() {
    check(LossTerm::Pde);
}

#[test]
fn jets_match_input_differences() {
    check_jets().unwrap_or_else(|e| panic!("{e}"));
}
