//! Lyapunov–Schmidt reduction on the chart `z_alpha = (alpha, beta(alpha))`.
//!
//! Coordinates split as `z = (a, b)` with `a` in `R^d` and `b` in `R^(m-d)`;
//! `pi` keeps the first `d` components, `pi_perp` the rest. The transverse
//! equation is solved by `b(eps) = beta(alpha) + sum eps^i gamma_i / i!`:
//!
//! ```text
//! gamma_i = -i! Delta^{-1} [ pi_perp g_i
//!             + sum_{b in S'_i} c(b) d_b^L pi_perp g_0 (gamma^b)
//!             + sum_{l=1..i-1} sum_{b in S_l} c(b) d_b^L pi_perp g_{i-l} (gamma^b) ]
//! f_i     = pi g_i + sum_{l=1..i} sum_{b in S_l} c(b) d_b^L pi g_{i-l} (gamma^b)
//! ```
//!
//! `Delta` is the lower-right block of `Id - Y(T)^{-1}`. Since `x(T) = z` on
//! the chart, `d_b g_0(z_alpha)` equals the last `m-d` columns of the same
//! matrix; higher b-derivatives use finite differences.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pwavg_expr::EvalError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::averaging::partitions::{
    bell_tuples, enumerate_partition_tuples, enumerate_reduced_tuples, factorial, BellTuple,
};
use crate::averaging::{averaged_functions, AveragedResult, AveragingError};
use crate::model::{Model, PiecewiseSystem};
use crate::odeint::Tolerances;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LsError {
    #[error(transparent)]
    Averaging(#[from] AveragingError),
    #[error("chart evaluation failed: {0}")]
    Chart(#[from] EvalError),
    #[error("monodromy matrix is singular")]
    SingularMonodromy,
    #[error("Delta_alpha is degenerate (|det| = {det:e})")]
    DegenerateDelta { det: f64 },
    #[error("order {requested} exceeds the system order {available}")]
    OrderTooHigh { requested: usize, available: usize },
}

/// Lower-right `(m-d) x (m-d)` block of `Id - YT^{-1}`.
pub fn delta_matrix(yt: &DMatrix<f64>, m: usize, d: usize) -> Result<DMatrix<f64>, LsError> {
    let full = id_minus_inverse(yt)?;
    Ok(full.view((d, d), (m - d, m - d)).into_owned())
}

fn id_minus_inverse(yt: &DMatrix<f64>) -> Result<DMatrix<f64>, LsError> {
    let m = yt.nrows();
    let inv = yt
        .clone()
        .lu()
        .try_inverse()
        .ok_or(LsError::SingularMonodromy)?;
    Ok(DMatrix::identity(m, m) - inv)
}

/// A dense tensor `T[c][j_1..j_L]` over `R^dim`, symmetric in the `j`s.
#[derive(Debug, Clone, PartialEq)]
pub struct BTensor {
    pub components: usize,
    pub dim: usize,
    pub order: usize,
    /// `values[c * dim^order + row-major(j_1..j_L)]`.
    pub values: Vec<f64>,
}

impl BTensor {
    fn zeros(components: usize, dim: usize, order: usize) -> BTensor {
        BTensor {
            components,
            dim,
            order,
            values: vec![0.0; components * dim.pow(order as u32)],
        }
    }

    fn flat(&self, index: &[usize]) -> usize {
        index.iter().fold(0, |acc, &j| acc * self.dim + j)
    }

    pub fn get(&self, c: usize, index: &[usize]) -> f64 {
        self.values[c * self.dim.pow(self.order as u32) + self.flat(index)]
    }

    fn set_symmetric(&mut self, c: usize, sorted: &[usize], v: f64) {
        let block = self.dim.pow(self.order as u32);
        let mut perm = sorted.to_vec();
        // write every permutation of the sorted index
        loop {
            let f = self.flat(&perm);
            self.values[c * block + f] = v;
            if !next_permutation(&mut perm) {
                break;
            }
        }
    }

    /// Restriction to components `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> BTensor {
        let block = self.dim.pow(self.order as u32);
        BTensor {
            components: range.len(),
            dim: self.dim,
            order: self.order,
            values: self.values[range.start * block..range.end * block].to_vec(),
        }
    }

    /// Full contraction with `order` vectors of length `dim`.
    pub fn contract(&self, vectors: &[&[f64]]) -> Vec<f64> {
        assert_eq!(vectors.len(), self.order, "contraction arity");
        let block = self.dim.pow(self.order as u32);
        let mut out = vec![0.0; self.components];
        let mut idx = vec![0usize; self.order];
        for flat in 0..block {
            let mut rest = flat;
            for p in (0..self.order).rev() {
                idx[p] = rest % self.dim;
                rest /= self.dim;
            }
            let w: f64 = idx.iter().zip(vectors).map(|(&j, v)| v[j]).product();
            if w != 0.0 {
                for (c, o) in out.iter_mut().enumerate() {
                    *o += self.values[c * block + flat] * w;
                }
            }
        }
        out
    }
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let Some(i) = (0..n - 1).rev().find(|&i| v[i] < v[i + 1]) else {
        return false;
    };
    let j = (i + 1..n).rev().find(|&j| v[j] > v[i]).unwrap();
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

fn binomial(n: usize, k: usize) -> f64 {
    (factorial(n) / (factorial(k) * factorial(n - k))) as f64
}

/// Derivatives of order `order` of `g` in the last `m - d` coordinates of
/// `z`, by a tensor-product central stencil with one Richardson level.
///
/// On each axis with multiplicity `n` the stencil is the order-`n` central
/// difference with nodes `(n/2 - j) h`, `j = 0..=n`, and `h = h0 (1 + |b|)`.
pub fn b_derivative<E>(
    g: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>, E>,
    z: &[f64],
    order: usize,
    m: usize,
    d: usize,
    h0: f64,
) -> Result<BTensor, E> {
    assert!(order >= 1, "b_derivative needs order >= 1");
    let dim = m - d;
    let mut out: Option<BTensor> = None;
    let mut sorted = vec![0usize; order];
    loop {
        let mut counts = vec![0usize; dim];
        for &a in &sorted {
            counts[a] += 1;
        }
        let h: Vec<f64> = (0..dim).map(|a| h0 * (1.0 + z[d + a].abs())).collect();
        let coarse = stencil(g, z, d, &counts, &h)?;
        let half: Vec<f64> = h.iter().map(|v| v / 2.0).collect();
        let fine = stencil(g, z, d, &counts, &half)?;
        let t = out.get_or_insert_with(|| BTensor::zeros(coarse.len(), dim, order));
        for c in 0..coarse.len() {
            t.set_symmetric(c, &sorted, (4.0 * fine[c] - coarse[c]) / 3.0);
        }
        // next non-decreasing index tuple
        let Some(pos) = (0..order).rev().find(|&p| sorted[p] + 1 < dim) else {
            break;
        };
        let v = sorted[pos] + 1;
        for s in &mut sorted[pos..] {
            *s = v;
        }
    }
    Ok(out.expect("at least one index tuple"))
}

fn stencil<E>(
    g: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>, E>,
    z: &[f64],
    d: usize,
    counts: &[usize],
    h: &[f64],
) -> Result<Vec<f64>, E> {
    let axes: Vec<usize> = (0..counts.len()).filter(|&a| counts[a] > 0).collect();
    let mut js = vec![0usize; axes.len()];
    let mut acc: Option<Vec<f64>> = None;
    loop {
        let mut p = z.to_vec();
        let mut w = 1.0;
        for (&a, &j) in axes.iter().zip(&js) {
            let n = counts[a];
            p[d + a] += (n as f64 / 2.0 - j as f64) * h[a];
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            w *= sign * binomial(n, j) / h[a].powi(n as i32);
        }
        let v = g(&p)?;
        let a = acc.get_or_insert_with(|| vec![0.0; v.len()]);
        for (x, y) in a.iter_mut().zip(v) {
            *x += w * y;
        }
        // odometer over j_a in 0..=n_a
        let mut pos = 0;
        loop {
            if pos == axes.len() {
                return Ok(acc.unwrap());
            }
            js[pos] += 1;
            if js[pos] <= counts[axes[pos]] {
                break;
            }
            js[pos] = 0;
            pos += 1;
        }
    }
}

/// Memoised `z -> g_0..g_k`.
pub struct GEvaluator<'a> {
    sys: &'a PiecewiseSystem,
    order: usize,
    tol: Tolerances,
    cache: HashMap<Vec<u64>, Arc<AveragedResult>>,
    pub evaluations: usize,
}

impl<'a> GEvaluator<'a> {
    pub fn new(sys: &'a PiecewiseSystem, order: usize, tol: Tolerances) -> Self {
        GEvaluator {
            sys,
            order,
            tol,
            cache: HashMap::new(),
            evaluations: 0,
        }
    }

    pub fn eval(&mut self, z: &[f64]) -> Result<Arc<AveragedResult>, AveragingError> {
        let key: Vec<u64> = z.iter().map(|v| v.to_bits()).collect();
        if let Some(r) = self.cache.get(&key) {
            return Ok(r.clone());
        }
        let mut r = averaged_functions(self.sys, z, self.order, self.tol)?;
        r.path = None;
        let r = Arc::new(r);
        self.evaluations += 1;
        self.cache.insert(key, r.clone());
        Ok(r)
    }

    /// `g_from..=g_to` concatenated.
    pub fn stacked(&mut self, z: &[f64], from: usize, to: usize) -> Result<Vec<f64>, AveragingError> {
        let r = self.eval(z)?;
        Ok(r.g[from..=to].concat())
    }
}

/// Which algebraic form assembles `gamma_i` and `f_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssemblyForm {
    /// Sums over `S_l` (canonical).
    PartitionSum,
    /// Partial Bell polynomials.
    Bell,
}

#[derive(Debug, Clone)]
pub struct BifurcationAssembly {
    pub alpha: Vec<f64>,
    pub z_alpha: Vec<f64>,
    pub delta: DMatrix<f64>,
    pub det_delta: f64,
    /// `gamma_1..gamma_k`.
    pub gammas: Vec<Vec<f64>>,
    /// `f[i - 1]` is `f_i(alpha)`.
    pub f: Vec<Vec<f64>>,
    /// `g_0..g_k` at `z_alpha`.
    pub g: Vec<Vec<f64>>,
    /// `derivs[L - 1][j]` is `d_b^L g_j(z_alpha)` for `j + L <= k`.
    pub derivs: Vec<Vec<BTensor>>,
    pub evaluations: usize,
}

fn h0_for(model: &Model, order: usize) -> f64 {
    model.options.fd_h0[order.min(3) - 1]
}

/// `gamma^b`: `gamma_j` repeated `b_j` times.
fn repeated<'v>(b: &[usize], gammas: &'v [Vec<f64>]) -> Vec<&'v [f64]> {
    let mut out = Vec::new();
    for (j, &bj) in b.iter().enumerate() {
        for _ in 0..bj {
            out.push(gammas[j].as_slice());
        }
    }
    out
}

fn bell_vector(t: &BTensor, tuples: &[BellTuple], gammas: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; t.components];
    for tu in tuples {
        let v = t.contract(&repeated(&tu.b, gammas));
        for (o, x) in out.iter_mut().zip(v) {
            *o += tu.weight * x;
        }
    }
    out
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (y, v) in acc.iter_mut().zip(x) {
        *y += a * v;
    }
}

/// Assembles `Delta_alpha`, `gamma_1..gamma_k` and `f_1..f_k` at `alpha`.
pub fn assemble_bifurcation(
    model: &Model,
    alpha: &[f64],
    k: usize,
    form: AssemblyForm,
) -> Result<BifurcationAssembly, LsError> {
    let sys = &model.system;
    if k > sys.k || k == 0 {
        return Err(LsError::OrderTooHigh {
            requested: k,
            available: sys.k,
        });
    }
    let m = sys.m;
    let d = model.chart.d;
    let dim = m - d;
    let z = model.z_alpha(alpha)?;
    let mut eval = GEvaluator::new(sys, k, model.options.tolerances());
    let base = eval.eval(&z)?;
    let g = base.g.clone();
    if dim == 0 {
        return Ok(BifurcationAssembly {
            alpha: alpha.to_vec(),
            z_alpha: z,
            delta: DMatrix::zeros(0, 0),
            det_delta: 1.0,
            gammas: Vec::new(),
            f: g[1..].to_vec(),
            g,
            derivs: Vec::new(),
            evaluations: eval.evaluations,
        });
    }
    let imy = id_minus_inverse(&base.y_t)?;
    let delta = imy.view((d, d), (dim, dim)).into_owned();
    let det_delta = delta.determinant();
    if !(det_delta.abs() > model.options.degeneracy_tol) {
        return Err(LsError::DegenerateDelta { det: det_delta });
    }

    // derivs[L-1][j] = d_b^L g_j for j = 0..=k-L
    let mut derivs: Vec<Vec<BTensor>> = Vec::with_capacity(k);
    for l in 1..=k {
        let mut row = Vec::with_capacity(k - l + 1);
        let mut fd_from = 0;
        if l == 1 {
            let mut t = BTensor::zeros(m, dim, 1);
            for c in 0..m {
                for a in 0..dim {
                    t.values[c * dim + a] = imy[(c, d + a)];
                }
            }
            row.push(t);
            fd_from = 1;
        }
        if fd_from <= k - l {
            let stacked = b_derivative(
                &mut |p: &[f64]| eval.stacked(p, fd_from, k - l),
                &z,
                l,
                m,
                d,
                h0_for(model, l),
            )?;
            for j in 0..=(k - l - fd_from) {
                row.push(stacked.slice(j * m..(j + 1) * m));
            }
        }
        derivs.push(row);
    }
    let dg = |l: usize, j: usize| &derivs[l - 1][j];
    let lu = delta.clone().lu();

    let mut gammas: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut f: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in 1..=k {
        let fi = factorial(i) as f64;
        // transverse equation
        let mut rest: Vec<f64> = g[i][d..].to_vec();
        match form {
            AssemblyForm::PartitionSum => {
                for t in enumerate_reduced_tuples(i).expect("k capped") {
                    let v = dg(t.order, 0).slice(d..m).contract(&repeated(&t.b, &gammas));
                    axpy(&mut rest, t.coefficient, &v);
                }
                for l in 1..i {
                    for t in enumerate_partition_tuples(l).expect("k capped") {
                        let v = dg(t.order, i - l)
                            .slice(d..m)
                            .contract(&repeated(&t.b, &gammas));
                        axpy(&mut rest, t.coefficient, &v);
                    }
                }
                rest.iter_mut().for_each(|v| *v *= fi);
            }
            AssemblyForm::Bell => {
                rest.iter_mut().for_each(|v| *v *= fi);
                for l in 1..i {
                    for q in 1..=l {
                        let v = bell_vector(
                            &dg(q, i - l).slice(d..m),
                            &bell_tuples(l, q).unwrap(),
                            &gammas,
                        );
                        axpy(&mut rest, fi / factorial(l) as f64, &v);
                    }
                }
                for q in 2..=i {
                    let v = bell_vector(&dg(q, 0).slice(d..m), &bell_tuples(i, q).unwrap(), &gammas);
                    axpy(&mut rest, 1.0, &v);
                }
            }
        }
        let gamma = lu
            .solve(&DVector::from_vec(rest))
            .ok_or(LsError::DegenerateDelta { det: det_delta })?;
        gammas.push(gamma.iter().map(|v| -v).collect());

        // reduced equation
        let mut fi_val: Vec<f64> = g[i][..d].to_vec();
        for l in 1..=i {
            match form {
                AssemblyForm::PartitionSum => {
                    for t in enumerate_partition_tuples(l).expect("k capped") {
                        let v = dg(t.order, i - l).slice(0..d).contract(&repeated(&t.b, &gammas));
                        axpy(&mut fi_val, t.coefficient, &v);
                    }
                }
                AssemblyForm::Bell => {
                    for q in 1..=l {
                        let v = bell_vector(
                            &dg(q, i - l).slice(0..d),
                            &bell_tuples(l, q).unwrap(),
                            &gammas,
                        );
                        axpy(&mut fi_val, 1.0 / factorial(l) as f64, &v);
                    }
                }
            }
        }
        f.push(fi_val);
    }
    Ok(BifurcationAssembly {
        alpha: alpha.to_vec(),
        z_alpha: z,
        delta,
        det_delta,
        gammas,
        f,
        g,
        derivs,
        evaluations: eval.evaluations,
    })
}

/// `f_i(alpha)` by the canonical form.
pub fn bifurcation_function(model: &Model, alpha: &[f64], i: usize) -> Result<Vec<f64>, LsError> {
    Ok(assemble_bifurcation(model, alpha, i, AssemblyForm::PartitionSum)?
        .f
        .pop()
        .expect("i >= 1"))
}

/// `gamma_1..gamma_k` at `alpha`.
pub fn gamma_sequence(model: &Model, alpha: &[f64], k: usize) -> Result<Vec<Vec<f64>>, LsError> {
    Ok(assemble_bifurcation(model, alpha, k, AssemblyForm::PartitionSum)?.gammas)
}

/// `d_b pi_perp g_0(z_alpha)` by finite differences, for cross-checking
/// [`delta_matrix`].
pub fn delta_by_finite_differences(model: &Model, alpha: &[f64]) -> Result<DMatrix<f64>, LsError> {
    let sys = &model.system;
    let (m, d) = (sys.m, model.chart.d);
    let z = model.z_alpha(alpha)?;
    let mut eval = GEvaluator::new(sys, 0, model.options.tolerances());
    let t = b_derivative(
        &mut |p: &[f64]| eval.stacked(p, 0, 0),
        &z,
        1,
        m,
        d,
        h0_for(model, 1),
    )?;
    let dim = m - d;
    Ok(DMatrix::from_fn(dim, dim, |r, c| t.get(d + r, &[c])))
}

/// One grid node with `f_1..f_k` (or the failure).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: Vec<f64>,
    /// `f[i - 1]` is `f_i(alpha)`; empty when the assembly failed.
    pub f: Vec<Vec<f64>>,
    pub error: Option<String>,
}

/// Tensor grid with `n` points per axis over the chart box.
pub fn grid_points(model: &Model, n: usize) -> Vec<Vec<f64>> {
    let ch = &model.chart;
    let total = n.pow(ch.d as u32);
    (0..total)
        .map(|flat| {
            let mut rest = flat;
            let mut a = vec![0.0; ch.d];
            for ax in (0..ch.d).rev() {
                let i = rest % n;
                rest /= n;
                let s = i as f64 / (n - 1) as f64;
                a[ax] = if i == n - 1 {
                    ch.v_upper[ax]
                } else {
                    ch.v_lower[ax] + s * (ch.v_upper[ax] - ch.v_lower[ax])
                };
            }
            a
        })
        .collect()
}

/// `f_1..f_k` over the grid, in parallel; ordering is deterministic.
pub fn evaluate_grid(model: &Model, k: usize, n: usize) -> Vec<GridPoint> {
    grid_points(model, n)
        .into_par_iter()
        .map(|alpha| match assemble_bifurcation(model, &alpha, k, AssemblyForm::PartitionSum) {
            Ok(a) => GridPoint {
                alpha,
                f: a.f,
                error: None,
            },
            Err(e) => GridPoint {
                alpha,
                f: Vec::new(),
                error: Some(e.to_string()),
            },
        })
        .collect()
}

/// `max |f_i|` over the successful grid nodes.
pub fn grid_max_abs(grid: &[GridPoint], i: usize) -> f64 {
    grid.iter()
        .filter(|p| p.error.is_none())
        .flat_map(|p| p.f[i - 1].iter().map(|v| v.abs()))
        .fold(0.0, f64::max)
}
