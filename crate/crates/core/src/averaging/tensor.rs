//! Symmetric derivative tensors of the zone fields and their contraction
//! with vectors.

use std::sync::Arc;

use pwavg_expr::{differentiate, simplify, CompiledExpr, EvalError, Expr};
use thiserror::Error;

use crate::model::Zone;

/// Storage layout of a symmetric order-`L` tensor over `R^m`: one slot per
/// non-decreasing index tuple, plus a map from full row-major multi-indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorLayout {
    pub m: usize,
    pub order: usize,
    pub tuples: Vec<Vec<usize>>,
    full_to_slot: Vec<usize>,
}

impl TensorLayout {
    pub fn new(m: usize, order: usize) -> TensorLayout {
        let mut tuples = Vec::new();
        let mut cur = vec![0usize; order];
        loop {
            tuples.push(cur.clone());
            // next non-decreasing tuple in lexicographic order
            let Some(pos) = (0..order).rev().find(|&p| cur[p] + 1 < m) else {
                break;
            };
            let v = cur[pos] + 1;
            for c in &mut cur[pos..] {
                *c = v;
            }
        }
        let full = m.pow(order as u32);
        let mut full_to_slot = Vec::with_capacity(full);
        let mut idx = vec![0usize; order];
        for flat in 0..full {
            let mut rest = flat;
            for p in (0..order).rev() {
                idx[p] = rest % m;
                rest /= m;
            }
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            full_to_slot.push(tuples.binary_search(&sorted).expect("sorted tuple is stored"));
        }
        TensorLayout {
            m,
            order,
            tuples,
            full_to_slot,
        }
    }

    pub fn slots(&self) -> usize {
        self.tuples.len()
    }

    pub fn slot_of(&self, tuple: &[usize]) -> usize {
        let mut sorted = tuple.to_vec();
        sorted.sort_unstable();
        self.tuples.binary_search(&sorted).expect("index in range")
    }
}

/// Symbolic partial derivatives `d^L F_i / dx_{i_1} ... dx_{i_L}` of one
/// zone field, for the non-decreasing index tuples only.
#[derive(Debug)]
pub struct SymbolicTensor {
    pub layout: Arc<TensorLayout>,
    /// `exprs[c][slot]`.
    pub exprs: Vec<Vec<Expr>>,
    compiled: Vec<Vec<CompiledExpr>>,
}

impl SymbolicTensor {
    pub fn eval(&self, env: &[f64]) -> Result<EvaluatedTensor, EvalError> {
        let slots = self.layout.slots();
        let mut values = Vec::with_capacity(self.compiled.len() * slots);
        for comp in &self.compiled {
            for e in comp {
                values.push(e.eval(env)?);
            }
        }
        Ok(EvaluatedTensor {
            layout: self.layout.clone(),
            values,
        })
    }
}

/// `d^L F_order` of `zone`, built once from the order `L - 1` tensor.
pub fn symbolic_tensor(zone: &Zone, order: usize, l: usize) -> Arc<SymbolicTensor> {
    zone.tensor_cell(order, l)
        .get_or_init(|| {
            let layout = zone.layout();
            let m = layout.m();
            let slots = layout.slot_map();
            let tl = Arc::new(TensorLayout::new(m, l));
            let exprs: Vec<Vec<Expr>> = if l == 0 {
                zone.rhs[order].iter().map(|e| vec![e.clone()]).collect()
            } else {
                let parent = symbolic_tensor(zone, order, l - 1);
                (0..m)
                    .map(|c| {
                        tl.tuples
                            .iter()
                            .map(|tuple| {
                                let (last, head) = tuple.split_last().unwrap();
                                let p = parent.layout.slot_of(head);
                                simplify(&differentiate(&parent.exprs[c][p], &layout.state[*last]))
                            })
                            .collect()
                    })
                    .collect()
            };
            let compiled = exprs
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|e| CompiledExpr::compile(e, &slots).expect("checked variables"))
                        .collect()
                })
                .collect();
            Arc::new(SymbolicTensor {
                layout: tl,
                exprs,
                compiled,
            })
        })
        .clone()
}

/// Values of a symmetric vector-valued tensor at one point.
#[derive(Debug, Clone)]
pub struct EvaluatedTensor {
    pub layout: Arc<TensorLayout>,
    /// `values[c * slots + slot]`.
    pub values: Vec<f64>,
}

impl EvaluatedTensor {
    pub fn components(&self) -> usize {
        self.values.len() / self.layout.slots()
    }

    pub fn entry(&self, c: usize, index: &[usize]) -> f64 {
        self.values[c * self.layout.slots() + self.layout.slot_of(index)]
    }
}

/// `d^L F_order` of `zone` at the environment `env` (t, x and params set).
pub fn derivative_tensor(
    zone: &Zone,
    order: usize,
    l: usize,
    env: &[f64],
) -> Result<EvaluatedTensor, EvalError> {
    symbolic_tensor(zone, order, l).eval(env)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContractError {
    #[error("tensor of order {order} contracted with {got} vectors")]
    Arity { order: usize, got: usize },
    #[error("vector of length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// `sum_{i_1..i_L} T[c][i_1..i_L] v_1[i_1] ... v_L[i_L]` for every component.
pub fn multilinear_contract(
    t: &EvaluatedTensor,
    vectors: &[&[f64]],
) -> Result<Vec<f64>, ContractError> {
    let layout = &t.layout;
    if vectors.len() != layout.order {
        return Err(ContractError::Arity {
            order: layout.order,
            got: vectors.len(),
        });
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != layout.m) {
        return Err(ContractError::Dimension {
            expected: layout.m,
            got: v.len(),
        });
    }
    let slots = layout.slots();
    let comps = t.components();
    let mut out = vec![0.0; comps];
    let m = layout.m;
    let mut idx = vec![0usize; layout.order];
    for flat in 0..layout.full_to_slot.len() {
        let mut rest = flat;
        for p in (0..layout.order).rev() {
            idx[p] = rest % m;
            rest /= m;
        }
        let w: f64 = idx.iter().zip(vectors).map(|(&i, v)| v[i]).product();
        if w == 0.0 {
            continue;
        }
        let slot = layout.full_to_slot[flat];
        for (c, o) in out.iter_mut().enumerate() {
            *o += t.values[c * slots + slot] * w;
        }
    }
    debug_assert_eq!(out.len(), comps);
    Ok(out)
}
