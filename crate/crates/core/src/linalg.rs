//! Cholesky factorization with a diagonal jitter schedule.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Number of escalation steps after the first attempt.
pub const JITTER_RETRIES: usize = 3;
/// Multiplier applied to the jitter at every escalation step.
pub const JITTER_GROWTH: f64 = 10.0;

/// Factorizes `matrix + jitter * I`, escalating the jitter by
/// [`JITTER_GROWTH`] up to [`JITTER_RETRIES`] times. Returns the factor and the
/// jitter that was finally used.
pub fn cholesky_with_jitter(
    matrix: &DMatrix<f64>,
    base_jitter: f64,
    what: &'static str,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = matrix.nrows();
    let mut jitter = base_jitter;
    for attempt in 0..=JITTER_RETRIES {
        let mut m = matrix.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            if chol.l_dirty().iter().all(|v| v.is_finite()) {
                return Ok((chol, jitter));
            }
        }
        if attempt < JITTER_RETRIES {
            jitter *= JITTER_GROWTH;
        }
    }
    let diag = matrix.diagonal();
    Err(Error::Factorization { what, size: n, jitter, diag_min: diag.min(), diag_max: diag.max() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_deficient_needs_jitter() {
        let m = DMatrix::from_element(2, 2, 1.0);
        assert!(Cholesky::new(m.clone()).is_none());
        let (chol, jitter) = cholesky_with_jitter(&m, 1e-9, "test").unwrap();
        assert_eq!(jitter, 1e-9);
        let rebuilt = chol.l() * chol.l().transpose();
        assert!((rebuilt[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn escalation_exhausted_reports_diagnostics() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match cholesky_with_jitter(&m, 1e-9, "indefinite") {
            Err(Error::Factorization { size, jitter, diag_min, .. }) => {
                assert_eq!(size, 2);
                assert!((jitter - 1e-6).abs() < 1e-18);
                assert_eq!(diag_min, -1.0);
            }
            other => panic!("expected factorization error, got {other:?}"),
        }
    }
}
