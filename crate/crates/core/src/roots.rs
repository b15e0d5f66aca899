//! Zeros of `f_k` on the box `V`: grid scan, damped Newton, certification.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::condition_number;
use crate::lsreduction::{bifurcation_function, GridPoint};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroStatus {
    Certified,
    Degenerate,
    Unconverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroCertificate {
    pub alpha_star: Vec<f64>,
    /// Euclidean norm of `f_k(alpha_star)`.
    pub residual: f64,
    /// Row-major `d x d` Jacobian.
    pub jacobian: Vec<Vec<f64>>,
    pub det_jacobian: f64,
    pub condition_estimate: f64,
    pub status: ZeroStatus,
    pub iterations: usize,
}

/// A starting point for Newton, with its bracket when `d = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub alpha: Vec<f64>,
    pub bracket: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub simple_zero_floor: f64,
    /// Base step of the FD Jacobian, scaled by `1 + |alpha_i|`.
    pub fd_h0: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-9,
            max_iter: 30,
            simple_zero_floor: 1e-6,
            fd_h0: 1e-4,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Tensor grid with `n` nodes per axis; last axis fastest.
pub fn box_grid(lower: &[f64], upper: &[f64], n: usize) -> Vec<Vec<f64>> {
    let d = lower.len();
    (0..n.pow(d as u32))
        .map(|flat| {
            let mut rest = flat;
            let mut a = vec![0.0; d];
            for ax in (0..d).rev() {
                let i = rest % n;
                rest /= n;
                a[ax] = if i + 1 == n {
                    upper[ax]
                } else {
                    lower[ax] + (upper[ax] - lower[ax]) * i as f64 / (n - 1) as f64
                };
            }
            a
        })
        .collect()
}

/// Candidates from values already sampled on [`box_grid`]`(lower, upper, n)`.
/// `None` marks a failed evaluation.
pub fn candidates_from_samples(
    values: &[Option<Vec<f64>>],
    points: &[Vec<f64>],
    n: usize,
) -> Vec<Candidate> {
    assert!(n >= 2, "resolution must be at least 2");
    let d = points.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    if d == 1 {
        for i in 0..points.len() {
            let Some(fi) = &values[i] else { continue };
            if fi[0] == 0.0 {
                out.push(Candidate {
                    alpha: points[i].clone(),
                    bracket: Some((points[i][0], points[i][0])),
                });
                continue;
            }
            if i + 1 == points.len() {
                break;
            }
            let Some(fj) = &values[i + 1] else { continue };
            if fj[0] != 0.0 && (fi[0] < 0.0) != (fj[0] < 0.0) {
                let (a, b) = (points[i][0], points[i + 1][0]);
                // secant point inside the bracket
                let s = a - fi[0] * (b - a) / (fj[0] - fi[0]);
                out.push(Candidate {
                    alpha: vec![s],
                    bracket: Some((a, b)),
                });
            }
        }
        return out;
    }
    let mags: Vec<Option<f64>> = values.iter().map(|v| v.as_deref().map(norm)).collect();
    let max = mags.iter().flatten().cloned().fold(0.0, f64::max);
    let threshold = 0.1 * max;
    let index = |flat: usize| -> Vec<usize> {
        let mut rest = flat;
        let mut idx = vec![0; d];
        for ax in (0..d).rev() {
            idx[ax] = rest % n;
            rest /= n;
        }
        idx
    };
    for (flat, mag) in mags.iter().enumerate() {
        let Some(mag) = *mag else { continue };
        if mag >= threshold && max > 0.0 {
            continue;
        }
        let idx = index(flat);
        let mut is_min = true;
        for offs in 0..3usize.pow(d as u32) {
            let mut rest = offs;
            let mut nb = 0usize;
            let mut valid = true;
            let mut centre = true;
            for &i in &idx {
                let o = (rest % 3) as isize - 1;
                rest /= 3;
                centre &= o == 0;
                let j = i as isize + o;
                if j < 0 || j >= n as isize {
                    valid = false;
                }
                nb = nb * n + j.max(0) as usize;
            }
            if centre || !valid {
                continue;
            }
            if let Some(other) = mags[nb] {
                // ties resolve to the earlier node
                if other < mag || (other == mag && nb < flat) {
                    is_min = false;
                    break;
                }
            }
        }
        if is_min {
            out.push(Candidate {
                alpha: points[flat].clone(),
                bracket: None,
            });
        }
    }
    out
}

/// Samples `f` on the grid and returns the candidates in grid order.
pub fn scan_grid<E>(
    f: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>, E>,
    lower: &[f64],
    upper: &[f64],
    n: usize,
) -> Vec<Candidate> {
    let points = box_grid(lower, upper, n);
    let values: Vec<Option<Vec<f64>>> = points.iter().map(|p| f(p).ok()).collect();
    candidates_from_samples(&values, &points, n)
}

/// Central-difference Jacobian with one Richardson level; row-major.
pub fn fd_jacobian<E>(
    f: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>, E>,
    alpha: &[f64],
    h0: f64,
) -> Result<DMatrix<f64>, E> {
    let d = alpha.len();
    let mut jac = DMatrix::zeros(0, d);
    for c in 0..d {
        let h = h0 * (1.0 + alpha[c].abs());
        let mut diff = |h: f64| -> Result<Vec<f64>, E> {
            let mut p = alpha.to_vec();
            p[c] += h;
            let fp = f(&p)?;
            p[c] = alpha[c] - h;
            let fm = f(&p)?;
            Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        };
        let coarse = diff(h)?;
        let fine = diff(h / 2.0)?;
        if jac.nrows() == 0 {
            jac = DMatrix::zeros(coarse.len(), d);
        }
        for r in 0..coarse.len() {
            jac[(r, c)] = (4.0 * fine[r] - coarse[r]) / 3.0;
        }
    }
    Ok(jac)
}

fn inside(alpha: &[f64], lower: &[f64], upper: &[f64]) -> bool {
    alpha
        .iter()
        .zip(lower.iter().zip(upper))
        .all(|(a, (lo, hi))| *a >= *lo && *a <= *hi)
}

/// Damped Newton from `alpha0` inside the closed box, with the Jacobian from
/// `df` or by finite differences.
#[allow(clippy::type_complexity)]
pub fn newton_refine<E>(
    f: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>, E>,
    mut df: Option<&mut dyn FnMut(&[f64]) -> Result<DMatrix<f64>, E>>,
    alpha0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: NewtonOptions,
) -> ZeroCertificate {
    let d = alpha0.len();
    let unconverged = |alpha: Vec<f64>, residual: f64, iterations: usize| ZeroCertificate {
        alpha_star: alpha,
        residual,
        jacobian: vec![vec![f64::NAN; d]; d],
        det_jacobian: f64::NAN,
        condition_estimate: f64::INFINITY,
        status: ZeroStatus::Unconverged,
        iterations,
    };
    let mut jacobian = |f: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>, E>,
                        a: &[f64]|
     -> Option<DMatrix<f64>> {
        match df.as_mut() {
            Some(df) => df(a).ok(),
            None => fd_jacobian(f, a, opts.fd_h0).ok(),
        }
    };
    let mut alpha = alpha0.to_vec();
    let Ok(mut fv) = f(&alpha) else {
        return unconverged(alpha, f64::INFINITY, 0);
    };
    let mut res = norm(&fv);
    let mut history = vec![res];
    let mut iterations = 0;
    let mut polished = false;
    loop {
        if res < opts.tol {
            if polished {
                break;
            }
            polished = true;
        } else if iterations >= opts.max_iter {
            return unconverged(alpha, res, iterations);
        }
        let Some(j) = jacobian(f, &alpha) else {
            return unconverged(alpha, res, iterations);
        };
        let Some(step) = j.clone().lu().solve(&nalgebra::DVector::from_column_slice(&fv)) else {
            if res < opts.tol {
                break;
            }
            return unconverged(alpha, res, iterations);
        };
        iterations += 1;
        let mut lambda = 1.0;
        let mut accepted = None;
        while lambda > 1.0 / 1024.0 {
            let trial: Vec<f64> = alpha.iter().zip(step.iter()).map(|(a, s)| a - lambda * s).collect();
            if inside(&trial, lower, upper) {
                if let Ok(ft) = f(&trial) {
                    let rt = norm(&ft);
                    if rt < res {
                        accepted = Some((trial, ft, rt));
                        break;
                    }
                }
            }
            lambda /= 2.0;
        }
        match accepted {
            Some((a, ft, rt)) => {
                alpha = a;
                fv = ft;
                res = rt;
                history.push(res);
            }
            None if res < opts.tol => break,
            None => return unconverged(alpha, res, iterations),
        }
    }
    let jac = jacobian(f, &alpha).unwrap_or_else(|| DMatrix::from_element(d, d, f64::NAN));
    let det = jac.determinant();
    // A nonsimple zero attracts Newton only linearly.
    let n = history.len();
    let linear = n >= 3
        && history[n - 1] > 0.1 * history[n - 2]
        && history[n - 2] > 0.1 * history[n - 3];
    let status = if det.abs() > opts.simple_zero_floor && !linear {
        ZeroStatus::Certified
    } else {
        ZeroStatus::Degenerate
    };
    ZeroCertificate {
        alpha_star: alpha,
        residual: res,
        jacobian: (0..jac.nrows())
            .map(|r| (0..jac.ncols()).map(|c| jac[(r, c)]).collect())
            .collect(),
        det_jacobian: det,
        condition_estimate: condition_number(&jac),
        status,
        iterations,
    }
}

/// Merges zeros closer than `tol`, keeping the smaller residual; order of
/// first appearance is preserved.
pub fn dedup(certs: Vec<ZeroCertificate>, tol: f64) -> Vec<ZeroCertificate> {
    let mut out: Vec<ZeroCertificate> = Vec::new();
    for c in certs {
        let close = out.iter_mut().find(|o| {
            let dist: f64 = o
                .alpha_star
                .iter()
                .zip(&c.alpha_star)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            dist < tol
        });
        match close {
            Some(o) if c.residual < o.residual => *o = c,
            Some(_) => {}
            None => out.push(c),
        }
    }
    out
}

/// Candidates of `f_k` from an engine grid, refined in parallel with the
/// engine as `f` and deduplicated. Only converged zeros are returned.
pub fn engine_zeros(model: &Model, k: usize, grid: &[GridPoint]) -> Vec<ZeroCertificate> {
    let o = &model.options;
    let points: Vec<Vec<f64>> = grid.iter().map(|p| p.alpha.clone()).collect();
    let values: Vec<Option<Vec<f64>>> = grid
        .iter()
        .map(|p| p.error.is_none().then(|| p.f[k - 1].clone()))
        .collect();
    let n = o.grid;
    let candidates = candidates_from_samples(&values, &points, n);
    let opts = NewtonOptions {
        tol: o.newton_tol,
        max_iter: o.max_iter,
        simple_zero_floor: o.simple_zero_floor,
        fd_h0: o.fd_h0[0].max(1e-4),
    };
    let certs: Vec<ZeroCertificate> = candidates
        .par_iter()
        .map(|c| {
            let mut f = |a: &[f64]| bifurcation_function(model, a, k);
            newton_refine(&mut f, None, &c.alpha, &model.chart.v_lower, &model.chart.v_upper, opts)
        })
        .collect();
    dedup(
        certs
            .into_iter()
            .filter(|c| c.status != ZeroStatus::Unconverged)
            .collect(),
        o.dedup_tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    type R = Result<Vec<f64>, ()>;

    #[test]
    fn quadratic_bracket_and_refinement() {
        let mut f = |a: &[f64]| -> R { Ok(vec![2.0 * a[0] * a[0] - a[0]]) };
        let c = scan_grid(&mut f, &[0.1], &[3.0], 64);
        assert_eq!(c.len(), 1);
        let (lo, hi) = c[0].bracket.unwrap();
        assert!(lo <= 0.5 && 0.5 <= hi);
        let cert = newton_refine(&mut f, None, &[0.4], &[0.1], &[3.0], NewtonOptions::default());
        assert_eq!(cert.status, ZeroStatus::Certified);
        assert!((cert.alpha_star[0] - 0.5).abs() < 1e-9);
        assert!((cert.jacobian[0][0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn sinc_brackets() {
        let mut f = |a: &[f64]| -> R { Ok(vec![-2.0 * a[0].sin() / a[0]]) };
        let c = scan_grid(&mut f, &[0.5], &[7.0], 64);
        assert_eq!(c.len(), 2);
        let pi = std::f64::consts::PI;
        assert!((c[0].alpha[0] - pi).abs() < 0.05);
        assert!((c[1].alpha[0] - 2.0 * pi).abs() < 0.05);
    }

    #[test]
    fn constant_has_no_candidates() {
        let mut f = |_: &[f64]| -> R { Ok(vec![1.0]) };
        assert!(scan_grid(&mut f, &[0.0], &[1.0], 16).is_empty());
        let mut g = |_: &[f64]| -> R { Ok(vec![1.0, 1.0]) };
        // flat landscape: the first node is the unique minimum, but it is
        // not below the threshold of a nonzero field
        assert!(scan_grid(&mut g, &[0.0, 0.0], &[1.0, 1.0], 5).is_empty());
    }

    #[test]
    fn double_root_is_degenerate() {
        let mut f = |a: &[f64]| -> R { Ok(vec![a[0] * a[0]]) };
        let cert = newton_refine(&mut f, None, &[0.3], &[-1.0], &[1.0], NewtonOptions::default());
        assert_eq!(cert.status, ZeroStatus::Degenerate);
    }

    #[test]
    fn two_dimensional_minimum() {
        let mut f = |a: &[f64]| -> R { Ok(vec![a[0] - 0.3, a[1] * a[1] - 0.25]) };
        let c = scan_grid(&mut f, &[0.0, 0.0], &[1.0, 1.0], 21);
        assert_eq!(c.len(), 1);
        let cert = newton_refine(&mut f, None, &c[0].alpha, &[0.0, 0.0], &[1.0, 1.0], NewtonOptions::default());
        assert_eq!(cert.status, ZeroStatus::Certified);
        assert!((cert.alpha_star[0] - 0.3).abs() < 1e-9 && (cert.alpha_star[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn leaving_the_box_is_unconverged() {
        let mut f = |a: &[f64]| -> R { Ok(vec![a[0] - 5.0]) };
        let cert = newton_refine(&mut f, None, &[0.5], &[0.0], &[1.0], NewtonOptions::default());
        assert_eq!(cert.status, ZeroStatus::Unconverged);
    }

    #[test]
    fn dedup_keeps_smaller_residual() {
        let mk = |a: f64, r: f64| ZeroCertificate {
            alpha_star: vec![a],
            residual: r,
            jacobian: vec![vec![1.0]],
            det_jacobian: 1.0,
            condition_estimate: 1.0,
            status: ZeroStatus::Certified,
            iterations: 1,
        };
        let out = dedup(vec![mk(1.0, 1e-8), mk(1.0 + 1e-8, 1e-10), mk(2.0, 1e-9)], 1e-6);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].residual, 1e-10);
    }
}
