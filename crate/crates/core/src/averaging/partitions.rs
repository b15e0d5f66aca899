//! Index sets for the multivariate chain rule.
//!
//! `S_l` is the set of tuples `(b_1..b_l)` of non-negative integers with
//! `sum j*b_j = l`; each tuple carries `L = sum b_j` and the weight
//! `c(b) = 1/(b_1! 1!^b_1 b_2! 2!^b_2 ... b_l! l!^b_l)`. The Bell sets
//! `S~_{p,q}` hold tuples `(b_1..b_{p-q+1})` with `sum b_j = q` and
//! `sum j*b_j = p`.

use thiserror::Error;

use crate::model::MAX_ORDER;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PartitionError {
    #[error("order {0} outside the supported range 1..={MAX_ORDER}")]
    OrderOutOfRange(usize),
    #[error("invalid Bell index (p, q) = ({0}, {1})")]
    InvalidBellIndex(usize, usize),
    #[error("expected {expected} Bell arguments, got {got}")]
    Arity { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTuple {
    pub b: Vec<usize>,
    pub l: usize,
    /// Total multiplicity `L = sum b_j`: the derivative order.
    pub order: usize,
    pub coefficient: f64,
}

pub(crate) fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

/// `prod_j b_j! (j!)^b_j` in exact arithmetic.
fn weight_denominator(b: &[usize]) -> u128 {
    b.iter()
        .enumerate()
        .map(|(j, &bj)| factorial(bj) * factorial(j + 1).pow(bj as u32))
        .product()
}

/// Tuples of length `len` with `sum (j+1)*b_j = total`, in reverse
/// lexicographic order (largest `b_1` first).
fn weighted_compositions(total: usize, len: usize) -> Vec<Vec<usize>> {
    fn go(pos: usize, rest: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let len = cur.len();
        if pos == len {
            if rest == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let w = pos + 1;
        for v in (0..=rest / w).rev() {
            cur[pos] = v;
            go(pos + 1, rest - v * w, cur, out);
        }
        cur[pos] = 0;
    }
    let mut out = Vec::new();
    go(0, total, &mut vec![0; len], &mut out);
    out
}

/// All of `S_l` with their weights.
pub fn enumerate_partition_tuples(l: usize) -> Result<Vec<PartitionTuple>, PartitionError> {
    if l == 0 || l > MAX_ORDER {
        return Err(PartitionError::OrderOutOfRange(l));
    }
    Ok(weighted_compositions(l, l)
        .into_iter()
        .map(|b| PartitionTuple {
            l,
            order: b.iter().sum(),
            coefficient: 1.0 / weight_denominator(&b) as f64,
            b,
        })
        .collect())
}

/// `S'_i`: `S_i` without the tuple `(0, ..., 0, 1)`.
pub fn enumerate_reduced_tuples(i: usize) -> Result<Vec<PartitionTuple>, PartitionError> {
    Ok(enumerate_partition_tuples(i)?
        .into_iter()
        .filter(|t| !(t.b[i - 1] == 1 && t.order == 1))
        .collect())
}

/// A member of `S~_{p,q}` with its Bell weight `p! / prod b_j! (j!)^b_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BellTuple {
    pub b: Vec<usize>,
    pub weight: f64,
}

/// `S~_{p,q}`, built by distributing `q` parts of sizes `1..=p-q+1`.
pub fn bell_tuples(p: usize, q: usize) -> Result<Vec<BellTuple>, PartitionError> {
    if q == 0 || q > p {
        return Err(PartitionError::InvalidBellIndex(p, q));
    }
    let len = p - q + 1;
    // Enumerate part counts directly by size rather than reusing S_l.
    fn go(size: usize, parts: usize, rest: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if size == 0 {
            if parts == 0 && rest == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let max = parts.min(rest / size);
        for v in 0..=max {
            cur[size - 1] = v;
            go(size - 1, parts - v, rest - v * size, cur, out);
        }
        cur[size - 1] = 0;
    }
    let mut raw = Vec::new();
    go(len, q, p, &mut vec![0; len], &mut raw);
    let pf = factorial(p);
    Ok(raw
        .into_iter()
        .map(|b| BellTuple {
            weight: (pf / weight_denominator(&b)) as f64,
            b,
        })
        .collect())
}

/// Partial Bell polynomial `B_{p,q}(x_1..x_{p-q+1})`.
pub fn bell_partial(p: usize, q: usize, x: &[f64]) -> Result<f64, PartitionError> {
    let tuples = bell_tuples(p, q)?;
    if x.len() != p - q + 1 {
        return Err(PartitionError::Arity {
            expected: p - q + 1,
            got: x.len(),
        });
    }
    Ok(tuples
        .iter()
        .map(|t| {
            t.weight
                * t.b
                    .iter()
                    .zip(x)
                    .map(|(&bj, xj)| xj.powi(bj as i32))
                    .product::<f64>()
        })
        .sum())
}
