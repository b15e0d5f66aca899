//! Zone-by-zone reconstruction of `w_i` by variation of parameters with
//! partial Bell polynomials. Kept as an independent oracle for
//! [`averaged_functions`](super::averaged_functions).
//!
//! On zone `j` with `Y_j(s) = Phi(s) Y(t_{j-1})` and `Phi(t_{j-1}) = Id`:
//!
//! ```text
//! w_i(s) = Y_j(s) [ Y_j(t_{j-1})^{-1} w_i(t_{j-1}) + int_{t_{j-1}}^s Y_j(u)^{-1} S_i(u) du ]
//! S_i    = i! F_i + sum_{m=2..i} d^m F_0 B_{i,m}(w)
//!               + sum_{l=1..i-1} sum_{m=1..l} i!/l! d^m F_{i-l} B_{l,m}(w)
//! ```

use nalgebra::{DMatrix, DVector};

use super::partitions::{bell_tuples, factorial, BellTuple};
use super::tensor::multilinear_contract;
use super::{
    assemble, mat_from_col_major, solve_monodromy, AveragedResult, AveragingError, SwitchNode,
    TensorBank,
};
use crate::model::PiecewiseSystem;
use crate::odeint::{integrate_zone, Tolerances};

/// `sum_{S~_{p,q}} weight * T(w_1^b_1, ..., w_{p-q+1}^b_{p-q+1})`.
fn bell_contract(
    tensor: &super::tensor::EvaluatedTensor,
    tuples: &[BellTuple],
    w: &[Vec<f64>],
) -> Vec<f64> {
    let m = tensor.components();
    let mut out = vec![0.0; m];
    for t in tuples {
        let mut vecs: Vec<&[f64]> = Vec::new();
        for (j, &bj) in t.b.iter().enumerate() {
            for _ in 0..bj {
                vecs.push(&w[j]);
            }
        }
        let v = multilinear_contract(tensor, &vecs).expect("Bell tuple arity");
        for (o, x) in out.iter_mut().zip(v) {
            *o += t.weight * x;
        }
    }
    out
}

/// One `(source order, derivative order, Bell (p, q), scale)` summand of `S_i`.
struct BellTerm {
    source: usize,
    deriv: usize,
    tuples: Vec<BellTuple>,
    scale: f64,
}

fn source_terms(k: usize) -> Vec<Vec<BellTerm>> {
    (1..=k)
        .map(|i| {
            let mut out = Vec::new();
            for mm in 2..=i {
                out.push(BellTerm {
                    source: 0,
                    deriv: mm,
                    tuples: bell_tuples(i, mm).unwrap(),
                    scale: 1.0,
                });
            }
            for l in 1..i {
                for mm in 1..=l {
                    out.push(BellTerm {
                        source: i - l,
                        deriv: mm,
                        tuples: bell_tuples(l, mm).unwrap(),
                        scale: (factorial(i) / factorial(l)) as f64,
                    });
                }
            }
            out
        })
        .collect()
}

/// Same contract as [`averaged_functions`](super::averaged_functions), by the
/// Bell-polynomial route.
pub fn averaged_functions_bell(
    sys: &PiecewiseSystem,
    z: &[f64],
    k: usize,
    tol: Tolerances,
) -> Result<AveragedResult, AveragingError> {
    if k > sys.k {
        return Err(AveragingError::OrderTooHigh {
            requested: k,
            available: sys.k,
        });
    }
    let m = sys.m;
    let terms = source_terms(k);
    let mut needed = vec![(0, 1)];
    for t in terms.iter().flatten() {
        needed.push((t.source, t.deriv));
    }
    let mut x = z.to_vec();
    let mut y_prev = DMatrix::<f64>::identity(m, m);
    let mut w_prev: Vec<Vec<f64>> = vec![vec![0.0; m]; k];
    let mut nodes = vec![SwitchNode {
        t: 0.0,
        x: x.clone(),
        y: y_prev.clone(),
    }];
    let mut env = sys.env();

    for j in 0..sys.n_zones() {
        let w_refs: Vec<&[f64]> = w_prev.iter().map(Vec::as_slice).collect();
        let c = solve_monodromy(&y_prev, &w_refs)?;
        let y_prev_lu = y_prev.clone().lu();
        // state: x, Phi (column-major), I_1..I_k
        let dim = m + m * m + k * m;
        let mut s0 = vec![0.0; dim];
        s0[..m].copy_from_slice(&x);
        for d in 0..m {
            s0[m + d * m + d] = 1.0;
        }
        let zone = &sys.zones[j];
        let seg = integrate_zone(
            |t, s, out| {
                let layout = &sys.layout;
                env[layout.time_slot()] = t;
                env[1..=m].copy_from_slice(&s[..m]);
                let err = |e: pwavg_expr::EvalError| e.to_string();
                zone.eval_order(0, &env, &mut out[..m]).map_err(err)?;
                let bank = TensorBank::evaluate(sys, j, &needed, &env).map_err(err)?;
                let jac = bank.get(0, 1);
                let phi = mat_from_col_major(m, &s[m..m + m * m]);
                let jm = DMatrix::from_row_slice(m, m, &jac.values);
                let dphi = &jm * &phi;
                out[m..m + m * m].copy_from_slice(dphi.as_slice());

                let yj = &phi * &y_prev;
                let w: Vec<Vec<f64>> = (0..k)
                    .map(|i| {
                        let acc = &s[m + m * m + i * m..m + m * m + (i + 1) * m];
                        let v = DVector::from_iterator(m, (0..m).map(|r| c[i][r] + acc[r]));
                        (&yj * v).as_slice().to_vec()
                    })
                    .collect();
                let phi_lu = phi.lu();
                let mut fi = vec![0.0; m];
                for i in 1..=k {
                    zone.eval_order(i, &env, &mut fi).map_err(err)?;
                    let mut src: Vec<f64> = fi.iter().map(|v| factorial(i) as f64 * v).collect();
                    for term in &terms[i - 1] {
                        let v = bell_contract(bank.get(term.source, term.deriv), &term.tuples, &w);
                        for (a, b) in src.iter_mut().zip(v) {
                            *a += term.scale * b;
                        }
                    }
                    let inner = phi_lu
                        .solve(&DVector::from_vec(src))
                        .ok_or("fundamental matrix became singular")?;
                    let integrand = y_prev_lu
                        .solve(&inner)
                        .ok_or("fundamental matrix became singular")?;
                    let dst = m + m * m + (i - 1) * m;
                    out[dst..dst + m].copy_from_slice(integrand.as_slice());
                }
                Ok(())
            },
            j,
            sys.switch_times[j],
            sys.switch_times[j + 1],
            &s0,
            tol,
        )?;
        let fin = seg.final_state();
        let phi = mat_from_col_major(m, &fin[m..m + m * m]);
        let yj = &phi * &y_prev;
        for i in 0..k {
            let acc = &fin[m + m * m + i * m..m + m * m + (i + 1) * m];
            let v = DVector::from_iterator(m, (0..m).map(|r| c[i][r] + acc[r]));
            w_prev[i] = (&yj * v).as_slice().to_vec();
        }
        x = fin[..m].to_vec();
        y_prev = yj;
        nodes.push(SwitchNode {
            t: sys.switch_times[j + 1],
            x: x.clone(),
            y: y_prev.clone(),
        });
    }
    assemble(z, x, y_prev, w_prev, nodes, None)
}
