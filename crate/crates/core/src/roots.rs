//! Safeguarded Newton iteration for strictly increasing functions.

use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-13;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Finds the root of a strictly increasing `f` on `[lo, hi]`.
///
/// `f_df` returns `(f(t), f'(t))`. The bracket is shrunk on every evaluation;
/// a Newton step is taken when it lands strictly inside the current bracket,
/// otherwise the midpoint is used. Stops once the step (or bracket width)
/// drops below `tol`.
pub fn increasing_root<F>(
    f_df: F,
    mut lo: f64,
    mut hi: f64,
    guess: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    let mut t = guess.clamp(lo, hi);
    let mut last = f64::NAN;
    for _ in 0..max_iter {
        let (ft, dft) = f_df(t);
        last = ft;
        if ft == 0.0 {
            return Ok(t);
        }
        if ft > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let newton = t - ft / dft;
        let next = if dft > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - t).abs();
        t = next;
        if step <= tol || hi - lo <= tol {
            return Ok(t);
        }
    }
    Err(Error::NoConvergence {
        input: guess,
        residual: last.abs(),
        iterations: max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_root_of_two() {
        let r = increasing_root(
            |t| (t * t * t - 2.0, 3.0 * t * t),
            0.0,
            2.0,
            0.0,
            1e-14,
            200,
        )
        .unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-13);
    }

    #[test]
    fn flat_start_falls_back_to_bisection() {
        // derivative vanishes at the initial guess
        let r = increasing_root(
            |t| (t * t * t - 0.5, 3.0 * t * t),
            0.0,
            1.0,
            0.0,
            1e-14,
            200,
        )
        .unwrap();
        assert!((r - 0.5f64.cbrt()).abs() < 1e-13);
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let err = increasing_root(|t| (t - 0.3, 1e-300), 0.0, 1.0, 0.9, 0.0, 3).unwrap_err();
        match err {
            Error::NoConvergence {
                iterations,
                residual,
                ..
            } => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
