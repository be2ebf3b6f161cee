//! Damped Gauss-Newton (Levenberg-Marquardt) over a caller-defined state
//! with a caller-supplied retraction.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// A step lowering the cost by less than this counts as convergence and
    /// is not applied.
    pub min_improvement: f64,
    /// Consecutive failed damped steps before giving up.
    pub max_rejections: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            min_improvement: 1e-8,
            max_rejections: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Termination {
    Converged,
    /// `max_rejections` consecutive damped steps failed to lower the cost.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LmOutcome<S> {
    pub state: S,
    /// Sum of squared residuals.
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost after every accepted step, starting with the initial cost.
    pub history: Vec<f64>,
}

/// Minimizes `Σ r²`. `residuals(state, want_jacobian)` returns the residual
/// vector and, when asked, its Jacobian w.r.t. the `nparams` increment that
/// `retract(state, delta)` applies.
pub fn levenberg_marquardt<S, F, R>(
    init: S,
    nparams: usize,
    cfg: &LmConfig,
    mut residuals: F,
    retract: R,
) -> Result<LmOutcome<S>>
where
    S: Clone,
    F: FnMut(&S, bool) -> (DVector<f64>, Option<DMatrix<f64>>),
    R: Fn(&S, &[f64]) -> Option<S>,
{
    let mut state = init;
    let (mut r, mut j) = residuals(&state, true);
    let initial = r.norm_squared();
    if !initial.is_finite() {
        return Err(Error::NonFinite("least-squares residual"));
    }
    let mut cost = initial;
    let mut history = alloc::vec![cost];
    let mut lambda = 1e-3;
    let mut rejections = 0;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let jm = j.take().expect("jacobian requested");
        if jm.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("least-squares jacobian"));
        }
        let jtj = jm.transpose() * &jm;
        let g = jm.transpose() * &r;
        let mut accepted = false;
        while rejections < cfg.max_rejections {
            let mut a = jtj.clone();
            for k in 0..nparams {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-9);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    rejections += 1;
                    continue;
                }
            };
            let Some(cand) = retract(&state, step.as_slice()) else {
                lambda *= 10.0;
                rejections += 1;
                continue;
            };
            let (rc, _) = residuals(&cand, false);
            let c = rc.norm_squared();
            if c.is_finite() && c < cost {
                if cost - c < cfg.min_improvement {
                    termination = Termination::Converged;
                    break;
                }
                state = cand;
                cost = c;
                history.push(c);
                lambda = (lambda / 10.0).max(1e-12);
                rejections = 0;
                accepted = true;
                break;
            }
            lambda *= 10.0;
            rejections += 1;
        }
        if termination == Termination::Converged {
            break;
        }
        if !accepted {
            termination = Termination::Stalled;
            break;
        }
        let next = residuals(&state, true);
        r = next.0;
        j = next.1;
    }
    Ok(LmOutcome {
        state,
        initial_cost: initial,
        final_cost: cost,
        iterations,
        termination,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_rosenbrock_residuals() {
        // r = (10 (y − x²), 1 − x)
        let out = levenberg_marquardt(
            [-1.2f64, 1.0],
            2,
            &LmConfig {
                max_iterations: 200,
                min_improvement: 1e-30,
                max_rejections: 20,
            },
            |s, want| {
                let r = DVector::from_vec(alloc::vec![10.0 * (s[1] - s[0] * s[0]), 1.0 - s[0]]);
                let j = want.then(|| DMatrix::from_row_slice(2, 2, &[-20.0 * s[0], 10.0, -1.0, 0.0]));
                (r, j)
            },
            |s, d| Some([s[0] + d[0], s[1] + d[1]]),
        )
        .unwrap();
        assert!((out.state[0] - 1.0).abs() < 1e-6 && (out.state[1] - 1.0).abs() < 1e-6);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }
}
