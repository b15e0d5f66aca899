//! Direct check of a certified zero: locate the periodic orbit of the full
//! system near `z_{alpha*}` and measure how fast it approaches as `eps -> 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, PiecewiseSystem};
use crate::odeint::{propagate_full, IntegrationError, Tolerances};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error("eps = 0: the time-T map is degenerate along the manifold")]
    ZeroEps,
    #[error("Newton did not converge after {iterations} iterations (|h| = {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("Jacobian of the displacement map is singular")]
    SingularJacobian,
    #[error("need at least 3 values of eps, got {0}")]
    TooFewEps(usize),
    #[error("chart evaluation failed: {0}")]
    Chart(String),
}

/// `h(z, eps) = x(T, z, eps) - z`.
pub fn displacement(
    sys: &PiecewiseSystem,
    z: &[f64],
    eps: f64,
    eps_max: f64,
    tol: Tolerances,
) -> Result<Vec<f64>, IntegrationError> {
    let traj = propagate_full(sys, z, eps, eps_max, tol)?;
    Ok(traj.final_state().iter().zip(z).map(|(x, z)| x - z).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocateOptions {
    pub verify_tol: f64,
    pub max_iter: usize,
    pub eps_max: f64,
    pub tol: Tolerances,
}

impl LocateOptions {
    pub fn from_model(model: &Model) -> Self {
        LocateOptions {
            verify_tol: model.options.verify_tol,
            max_iter: 30,
            eps_max: model.options.eps_max,
            tol: model.options.verify_tolerances(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Located {
    pub z: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fixed point of the time-T map at `eps` by damped Newton with a central
/// difference Jacobian.
pub fn locate_periodic_orbit(
    sys: &PiecewiseSystem,
    z_guess: &[f64],
    eps: f64,
    opts: LocateOptions,
) -> Result<Located, VerifyError> {
    if eps == 0.0 {
        return Err(VerifyError::ZeroEps);
    }
    let m = sys.m;
    let h = |z: &[f64]| displacement(sys, z, eps, opts.eps_max, opts.tol);
    let mut z = z_guess.to_vec();
    let mut hv = h(&z)?;
    let mut res = norm(&hv);
    let mut iterations = 0;
    while res >= opts.verify_tol {
        if iterations >= opts.max_iter {
            return Err(VerifyError::NotConverged {
                iterations,
                residual: res,
            });
        }
        iterations += 1;
        let mut jac = DMatrix::zeros(m, m);
        for c in 0..m {
            let step = 1e-6 * (1.0 + z[c].abs());
            let mut p = z.clone();
            p[c] += step;
            let hp = h(&p)?;
            p[c] = z[c] - step;
            let hm = h(&p)?;
            for r in 0..m {
                jac[(r, c)] = (hp[r] - hm[r]) / (2.0 * step);
            }
        }
        let delta = jac
            .lu()
            .solve(&DVector::from_column_slice(&hv))
            .ok_or(VerifyError::SingularJacobian)?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = z.iter().zip(delta.iter()).map(|(a, d)| a - lambda * d).collect();
            // a trial point may leave the domain of the field; shrink instead
            if let Ok(ht) = h(&trial) {
                let rt = norm(&ht);
                if rt < res {
                    z = trial;
                    hv = ht;
                    res = rt;
                    break;
                }
            }
            lambda /= 2.0;
            if lambda < 1.0 / 1024.0 {
                return Err(VerifyError::NotConverged {
                    iterations,
                    residual: res,
                });
            }
        }
    }
    Ok(Located {
        z,
        residual: res,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub alpha_star: Vec<f64>,
    pub z_alpha: Vec<f64>,
    pub eps_list: Vec<f64>,
    /// Located fixed points, one per successfully processed `eps`.
    pub z_eps: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub distances: Vec<f64>,
    /// Least-squares slope of `log distance` against `log eps`.
    pub slope: Option<f64>,
    pub passed: bool,
    pub failure: Option<String>,
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Orbit continuation over `eps_list` (warm-started in the given order)
/// and the fitted convergence rate towards `z_{alpha*}`.
pub fn convergence_order(
    model: &Model,
    alpha_star: &[f64],
    eps_list: &[f64],
) -> Result<VerificationRecord, VerifyError> {
    if eps_list.len() < 3 {
        return Err(VerifyError::TooFewEps(eps_list.len()));
    }
    let opts = LocateOptions::from_model(model);
    let z_alpha = model
        .z_alpha(alpha_star)
        .map_err(|e| VerifyError::Chart(e.to_string()))?;
    let mut rec = VerificationRecord {
        alpha_star: alpha_star.to_vec(),
        z_alpha: z_alpha.clone(),
        eps_list: eps_list.to_vec(),
        z_eps: Vec::new(),
        residuals: Vec::new(),
        distances: Vec::new(),
        slope: None,
        passed: false,
        failure: None,
    };
    let mut guess = z_alpha.clone();
    for &eps in eps_list {
        match locate_periodic_orbit(&model.system, &guess, eps, opts) {
            Ok(loc) => {
                let dist = norm(&loc.z.iter().zip(&z_alpha).map(|(a, b)| a - b).collect::<Vec<_>>());
                log::debug!("eps = {eps:e}: |z - z_alpha| = {dist:e}, |h| = {:e}", loc.residual);
                guess = loc.z.clone();
                rec.z_eps.push(loc.z);
                rec.residuals.push(loc.residual);
                rec.distances.push(dist);
            }
            Err(e) => {
                rec.failure = Some(format!("eps = {eps:e}: {e}"));
                return Ok(rec);
            }
        }
    }
    let tiny = rec.distances.iter().all(|&d| d < 10.0 * opts.verify_tol);
    if rec.distances.iter().all(|&d| d > 0.0) {
        let lx: Vec<f64> = eps_list.iter().map(|e| e.abs().ln()).collect();
        let ly: Vec<f64> = rec.distances.iter().map(|d| d.ln()).collect();
        rec.slope = Some(fit_slope(&lx, &ly));
    }
    let in_band = rec.slope.is_some_and(|s| (0.8..=1.3).contains(&s));
    rec.passed = (in_band || tiny) && rec.residuals.iter().all(|&r| r < opts.verify_tol);
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        assert!((fit_slope(&x, &y) - 2.0).abs() < 1e-14);
    }
}
