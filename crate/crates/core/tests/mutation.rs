//! Run with `--features mutant-orthogonality-adjoint` to confirm that a sign
//! flip in the orthogonality adjoint is caught by the gradient checks.

use steam::verify::gradient_checks;

fn orthogonality_checks() -> Vec<steam::verify::Check> {
    gradient_checks()
        .into_iter()
        .filter(|c| c.name == "fd.orthogonality" || c.name == "fd.composed.steam")
        .collect()
}

#[cfg(not(feature = "mutant-orthogonality-adjoint"))]
#[test]
fn correct_adjoint_passes_gradient_checks() {
    let checks = orthogonality_checks();
    assert_eq!(checks.len(), 2);
    assert!(checks.iter().all(|c| c.passed), "{checks:?}");
}

#[cfg(feature = "mutant-orthogonality-adjoint")]
#[test]
fn flipped_adjoint_fails_gradient_checks() {
    let checks = orthogonality_checks();
    assert_eq!(checks.len(), 2);
    assert!(checks.iter().all(|c| !c.passed), "{checks:?}");
}
