//! Damped least-squares curve fitting (Levenberg-style trust region).

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Fit outcome: parameters, RMS residual, and the iteration count.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<f64>,
    pub residual_rms: f64,
    pub iterations: usize,
}

/// Minimize `sum_i (y_i - model(p, x_i))^2` over `p` starting from `p0`.
///
/// `jacobian` fills the gradient of the model value with respect to the
/// parameters at one sample point. Fails with [`Error::FitDiverged`] when no
/// acceptable step is found within `max_iterations`.
pub fn fit_least_squares<M, J>(
    x: &[f64],
    y: &[f64],
    p0: &[f64],
    model: M,
    jacobian: J,
    max_iterations: usize,
) -> Result<FitResult>
where
    M: Fn(&[f64], f64) -> f64,
    J: Fn(&[f64], f64, &mut [f64]),
{
    assert_eq!(x.len(), y.len(), "x and y must be the same length");
    let n = x.len();
    let np = p0.len();
    if n < np {
        return Err(Error::Invalid(format!(
            "{n} samples cannot constrain {np} parameters"
        )));
    }
    let cost_of = |p: &[f64]| -> f64 {
        x.iter()
            .zip(y)
            .map(|(&xi, &yi)| {
                let r = yi - model(p, xi);
                r * r
            })
            .sum()
    };

    let mut params = p0.to_vec();
    let mut cost = cost_of(&params);
    let mut lambda = 1.0e-3;
    let mut grad_row = vec![0.0; np];

    for iteration in 1..=max_iterations {
        // residuals and Jacobian at the current point
        let mut jt_j = DMatrix::<f64>::zeros(np, np);
        let mut jt_r = DVector::<f64>::zeros(np);
        for (&xi, &yi) in x.iter().zip(y) {
            let r = yi - model(&params, xi);
            jacobian(&params, xi, &mut grad_row);
            for a in 0..np {
                jt_r[a] += grad_row[a] * r;
                for b in a..np {
                    jt_j[(a, b)] += grad_row[a] * grad_row[b];
                }
            }
        }
        for a in 0..np {
            for b in 0..a {
                jt_j[(a, b)] = jt_j[(b, a)];
            }
        }

        let mut accepted = false;
        for _ in 0..30 {
            let mut damped = jt_j.clone();
            for a in 0..np {
                damped[(a, a)] += lambda * jt_j[(a, a)].max(1.0e-30);
            }
            let Some(step) = damped.lu().solve(&jt_r) else {
                lambda *= 4.0;
                continue;
            };
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
            let trial_cost = cost_of(&trial);
            if trial_cost <= cost {
                let step_scale =
                    step.norm() / params.iter().map(|p| p * p).sum::<f64>().sqrt().max(1e-30);
                let improvement = cost - trial_cost;
                params = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1.0e-12);
                accepted = true;
                if step_scale < 1.0e-12 || improvement <= 1.0e-15 * cost.max(1e-300) {
                    return Ok(FitResult {
                        params,
                        residual_rms: (cost / n as f64).sqrt(),
                        iterations: iteration,
                    });
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // stuck in a flat or ill-conditioned region; report convergence
            // if the gradient already vanished
            if jt_r.norm() < 1.0e-12 * cost.max(1.0) {
                return Ok(FitResult {
                    params,
                    residual_rms: (cost / n as f64).sqrt(),
                    iterations: iteration,
                });
            }
            return Err(Error::FitDiverged(iteration));
        }
    }
    Ok(FitResult {
        params,
        residual_rms: (cost / n as f64).sqrt(),
        iterations: max_iterations,
    })
}
