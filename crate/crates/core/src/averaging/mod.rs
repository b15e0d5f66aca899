//! Averaged functions `g_0..g_k` from one augmented forward integration.
//!
//! The augmented state is `(x, Y, w_1..w_k)` with `Y` stored column-major.
//! On zone `j`:
//!
//! ```text
//! x'   = F_0(t, x)
//! Y'   = dF_0(t, x) Y
//! w_i' = i! [ F_i + sum_{l=1..i} sum_{b in S_l} c(b) d^L F_{i-l}(t, x) (w_1^b_1, ..., w_l^b_l) ]
//! ```
//!
//! with `Y(0) = Id`, `w_i(0) = 0` and every component continuous across the
//! switching times. Then `g_0 = Y(T)^{-1} (x(T) - z)` and
//! `g_i = Y(T)^{-1} w_i(T) / i!`.

pub mod bell;
pub mod partitions;
pub mod tensor;

pub use bell::averaged_functions_bell;

use nalgebra::{DMatrix, DVector};
use pwavg_expr::EvalError;
use thiserror::Error;

use crate::model::{PiecewiseSystem, MAX_ORDER};
use crate::odeint::{integrate_zone, IntegrationError, Segment, Tolerances, Trajectory};
use partitions::{enumerate_partition_tuples, factorial};
use tensor::{derivative_tensor, multilinear_contract, EvaluatedTensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AveragingError {
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error("order {requested} exceeds the system order {available}")]
    OrderTooHigh { requested: usize, available: usize },
    #[error("monodromy matrix Y(T) is singular (condition estimate {condition:e})")]
    SingularMonodromy { condition: f64 },
}

/// State of the unperturbed problem at one switching time.
#[derive(Debug, Clone)]
pub struct SwitchNode {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct AveragedResult {
    pub z: Vec<f64>,
    pub order: usize,
    /// `x(T, z, 0)`.
    pub x_t: Vec<f64>,
    /// `Y(T, z)`.
    pub y_t: DMatrix<f64>,
    /// `w_i(T, z)` for `i = 1..=order`.
    pub w_final: Vec<Vec<f64>>,
    /// `g_i(z)` for `i = 0..=order`.
    pub g: Vec<Vec<f64>>,
    /// `(x, Y)` at `t_0..t_n`.
    pub nodes: Vec<SwitchNode>,
    /// The augmented path `(x, Y, w_1..w_k)` (canonical route only).
    pub path: Option<Trajectory>,
}

pub(crate) fn mat_from_col_major(m: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(m, m, data)
}

/// Ratio of extreme singular values.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `Y x = b` for several right-hand sides by LU with partial pivoting.
pub(crate) fn solve_monodromy(
    y: &DMatrix<f64>,
    rhs: &[&[f64]],
) -> Result<Vec<Vec<f64>>, AveragingError> {
    let lu = y.clone().lu();
    let singular = || AveragingError::SingularMonodromy {
        condition: condition_number(y),
    };
    if !lu.is_invertible() {
        return Err(singular());
    }
    rhs.iter()
        .map(|b| {
            lu.solve(&DVector::from_column_slice(b))
                .map(|v| v.as_slice().to_vec())
                .ok_or_else(singular)
        })
        .collect()
}

/// Tensor evaluations needed at one point, indexed `[source order][L]`.
pub(crate) struct TensorBank {
    tensors: Vec<Vec<Option<EvaluatedTensor>>>,
}

impl TensorBank {
    pub(crate) fn evaluate(
        sys: &PiecewiseSystem,
        zone: usize,
        needed: &[(usize, usize)],
        env: &[f64],
    ) -> Result<TensorBank, EvalError> {
        let mut tensors: Vec<Vec<Option<EvaluatedTensor>>> =
            (0..=sys.k).map(|_| (0..=MAX_ORDER + 1).map(|_| None).collect()).collect();
        for &(q, l) in needed {
            if tensors[q][l].is_none() {
                tensors[q][l] = Some(derivative_tensor(&sys.zones[zone], q, l, env)?);
            }
        }
        Ok(TensorBank { tensors })
    }

    pub(crate) fn get(&self, q: usize, l: usize) -> &EvaluatedTensor {
        self.tensors[q][l].as_ref().expect("tensor requested up front")
    }
}

/// One summand `coef * d^L F_source (w^b)` of the `w_i` equation.
struct Term {
    source: usize,
    order: usize,
    b: Vec<usize>,
    coef: f64,
}

/// The augmented field for orders `1..=k`.
struct Augmented<'a> {
    sys: &'a PiecewiseSystem,
    k: usize,
    terms: Vec<Vec<Term>>,
    needed: Vec<(usize, usize)>,
    with_trace: bool,
}

impl<'a> Augmented<'a> {
    fn new(sys: &'a PiecewiseSystem, k: usize, with_trace: bool) -> Self {
        let mut terms = Vec::with_capacity(k);
        let mut needed = vec![(0, 1)];
        for i in 1..=k {
            let fi = factorial(i) as f64;
            let mut list = Vec::new();
            for l in 1..=i {
                for t in enumerate_partition_tuples(l).expect("k is capped") {
                    needed.push((i - l, t.order));
                    list.push(Term {
                        source: i - l,
                        order: t.order,
                        b: t.b,
                        coef: fi * t.coefficient,
                    });
                }
            }
            terms.push(list);
        }
        needed.sort_unstable();
        needed.dedup();
        Augmented {
            sys,
            k,
            terms,
            needed,
            with_trace,
        }
    }

    fn dim(&self) -> usize {
        let m = self.sys.m;
        m + m * m + self.k * m + usize::from(self.with_trace)
    }

    fn initial(&self, z: &[f64]) -> Vec<f64> {
        let m = self.sys.m;
        let mut y0 = vec![0.0; self.dim()];
        y0[..m].copy_from_slice(z);
        for c in 0..m {
            y0[m + c * m + c] = 1.0;
        }
        y0
    }

    fn eval(&self, zone: usize, env: &mut [f64], t: f64, y: &[f64], out: &mut [f64]) -> Result<(), String> {
        let sys = self.sys;
        let m = sys.m;
        let layout = &sys.layout;
        env[layout.time_slot()] = t;
        env[1..=m].copy_from_slice(&y[..m]);
        let z = &sys.zones[zone];
        let err = |e: EvalError| e.to_string();
        z.eval_order(0, env, &mut out[..m]).map_err(err)?;
        let bank = TensorBank::evaluate(sys, zone, &self.needed, env).map_err(err)?;
        let jac = bank.get(0, 1);
        let ys = &y[m..m + m * m];
        for col in 0..m {
            for r in 0..m {
                let mut acc = 0.0;
                for s in 0..m {
                    acc += jac.values[r * m + s] * ys[s + col * m];
                }
                out[m + r + col * m] = acc;
            }
        }
        let w_base = m + m * m;
        let w = |j: usize| &y[w_base + (j - 1) * m..w_base + j * m];
        let mut fi = vec![0.0; m];
        for i in 1..=self.k {
            z.eval_order(i, env, &mut fi).map_err(err)?;
            let scale = factorial(i) as f64;
            let dst = w_base + (i - 1) * m;
            for c in 0..m {
                out[dst + c] = scale * fi[c];
            }
            for term in &self.terms[i - 1] {
                let mut vecs: Vec<&[f64]> = Vec::with_capacity(term.order);
                for (j, &bj) in term.b.iter().enumerate() {
                    for _ in 0..bj {
                        vecs.push(w(j + 1));
                    }
                }
                let v = multilinear_contract(bank.get(term.source, term.order), &vecs)
                    .expect("arity matches by construction");
                for c in 0..m {
                    out[dst + c] += term.coef * v[c];
                }
            }
        }
        if self.with_trace {
            out[self.dim() - 1] = (0..m).map(|c| jac.values[c * m + c]).sum();
        }
        Ok(())
    }

    fn integrate(&self, z: &[f64], tol: Tolerances) -> Result<Trajectory, AveragingError> {
        let sys = self.sys;
        let mut env = sys.env();
        let mut state = self.initial(z);
        let mut segments: Vec<Segment> = Vec::with_capacity(sys.n_zones());
        for j in 0..sys.n_zones() {
            let seg = integrate_zone(
                |t, y, out| self.eval(j, &mut env, t, y, out),
                j,
                sys.switch_times[j],
                sys.switch_times[j + 1],
                &state,
                tol,
            )?;
            state = seg.final_state().to_vec();
            segments.push(seg);
        }
        Ok(Trajectory { segments })
    }
}

/// Assembles `g_0..g_k` from `x(T)`, `Y(T)` and `w_i(T)`.
pub(crate) fn assemble(
    z: &[f64],
    x_t: Vec<f64>,
    y_t: DMatrix<f64>,
    w_final: Vec<Vec<f64>>,
    nodes: Vec<SwitchNode>,
    path: Option<Trajectory>,
) -> Result<AveragedResult, AveragingError> {
    let gap: Vec<f64> = x_t.iter().zip(z).map(|(a, b)| a - b).collect();
    let mut rhs: Vec<&[f64]> = vec![&gap];
    rhs.extend(w_final.iter().map(Vec::as_slice));
    let mut g = solve_monodromy(&y_t, &rhs)?;
    for (i, gi) in g.iter_mut().enumerate().skip(1) {
        let f = factorial(i) as f64;
        gi.iter_mut().for_each(|v| *v /= f);
    }
    Ok(AveragedResult {
        z: z.to_vec(),
        order: w_final.len(),
        x_t,
        y_t,
        w_final,
        g,
        nodes,
        path,
    })
}

/// `g_0..g_k` at `z` by the single augmented integration.
pub fn averaged_functions(
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
    assert_eq!(z.len(), sys.m, "base point has the wrong dimension");
    let aug = Augmented::new(sys, k, false);
    let path = aug.integrate(z, tol)?;
    let m = sys.m;
    let nodes = path
        .nodes()
        .into_iter()
        .map(|(t, s)| SwitchNode {
            t,
            x: s[..m].to_vec(),
            y: mat_from_col_major(m, &s[m..m + m * m]),
        })
        .collect();
    let fin = path.final_state();
    let x_t = fin[..m].to_vec();
    let y_t = mat_from_col_major(m, &fin[m..m + m * m]);
    let w_final = (1..=k)
        .map(|i| fin[m + m * m + (i - 1) * m..m + m * m + i * m].to_vec())
        .collect();
    assemble(z, x_t, y_t, w_final, nodes, Some(path))
}

/// Abel–Liouville comparison at one switching time.
#[derive(Debug, Clone, PartialEq)]
pub struct LiouvilleNode {
    pub t: f64,
    pub det_y: f64,
    pub exp_trace_integral: f64,
    pub rel_error: f64,
}

/// `det Y(t_j)` against `exp(int_0^{t_j} tr dF_0)` at every switching time.
pub fn liouville_check(
    sys: &PiecewiseSystem,
    z: &[f64],
    tol: Tolerances,
) -> Result<Vec<LiouvilleNode>, AveragingError> {
    let aug = Augmented::new(sys, 0, true);
    let path = aug.integrate(z, tol)?;
    let m = sys.m;
    Ok(path
        .nodes()
        .into_iter()
        .map(|(t, s)| {
            let det_y = mat_from_col_major(m, &s[m..m + m * m]).determinant();
            let exp_trace_integral = s[s.len() - 1].exp();
            LiouvilleNode {
                t,
                det_y,
                exp_trace_integral,
                rel_error: (det_y - exp_trace_integral).abs() / exp_trace_integral.abs(),
            }
        })
        .collect())
}

/// CSV dump of the augmented path with columns `t, x_*, Y_rc, w_i_c, zone`.
pub fn path_csv(sys: &PiecewiseSystem, result: &AveragedResult) -> Option<String> {
    let path = result.path.as_ref()?;
    let m = sys.m;
    let mut names: Vec<String> = sys.layout.state.clone();
    for c in 0..m {
        for r in 0..m {
            names.push(format!("Y_{}{}", r + 1, c + 1));
        }
    }
    for i in 1..=result.order {
        for c in 0..m {
            names.push(format!("w{}_{}", i, c + 1));
        }
    }
    Some(path.to_csv(&names))
}
