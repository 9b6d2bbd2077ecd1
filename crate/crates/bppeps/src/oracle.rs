//! Brute-force contraction of `⟨ψ|ψ⟩`, `⟨ψ|O_A|ψ⟩` and `⟨ψ|O_A O_B|ψ⟩`.
//!
//! Nothing here uses the contraction code of the approximation modules: the
//! double layers are rebuilt from raw tensor data and both algorithms carry
//! their own index arithmetic.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peps::PepsNetwork;
use crate::tensor::{c, Matrix, C64};

/// Multiply budget shared by both algorithms.
pub const ORACLE_BUDGET: f64 = 1e9;
const CHUNK: usize = 1 << 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleMethod {
    #[serde(rename = "edge-enumeration")]
    EdgeEnumeration,
    #[serde(rename = "sequential-contraction")]
    SequentialContraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: C64,
    pub method: OracleMethod,
    /// Multiplications performed (or estimated, for refused runs).
    pub cost: f64,
}

/// Double layer `Σ_{p,p'} T[p,x]·O[p',p]·conj(T[p',y])` built from raw data
/// (`O = 1` when `op` is `None`).
fn raw_double_layer(p: &PepsNetwork, v: usize, op: Option<&Matrix>) -> Vec<C64> {
    let t = p.tensor(v).data();
    let d = p.phys_dim();
    let x_dim = t.len() / d;
    let mut out = vec![c(0.0, 0.0); x_dim * x_dim];
    for x in 0..x_dim {
        for y in 0..x_dim {
            let mut s = c(0.0, 0.0);
            match op {
                None => {
                    for q in 0..d {
                        s += t[q * x_dim + x] * t[q * x_dim + y].conj();
                    }
                }
                Some(o) => {
                    for q in 0..d {
                        for q2 in 0..d {
                            s += t[q * x_dim + x] * o[(q2, q)] * t[q2 * x_dim + y].conj();
                        }
                    }
                }
            }
            out[x * x_dim + y] = s;
        }
    }
    out
}

fn layers(p: &PepsNetwork, ops: &[(usize, Matrix)]) -> Result<Vec<Vec<C64>>> {
    let mut by_site: BTreeMap<usize, &Matrix> = BTreeMap::new();
    for (v, o) in ops {
        if *v >= p.graph().vertex_count() {
            return Err(Error::Invalid(format!("operator site {v} out of range")));
        }
        if o.rows() != p.phys_dim() || o.cols() != p.phys_dim() {
            return Err(Error::DimensionMismatch(format!("operator at {v} is {}x{}", o.rows(), o.cols())));
        }
        if by_site.insert(*v, o).is_some() {
            return Err(Error::Invalid(format!("two operators at site {v}")));
        }
    }
    Ok((0..p.graph().vertex_count()).map(|v| raw_double_layer(p, v, by_site.get(&v).copied())).collect())
}

pub fn edge_enumeration_cost(p: &PepsNetwork) -> f64 {
    let g = p.graph();
    (p.bond_dim() as f64).powi(2 * g.edge_count() as i32) * g.vertex_count() as f64 * p.phys_dim() as f64
}

/// Sum over all `D^{2|E|}` doubled bond configurations of `Π_v G_v[x_v, y_v]`.
fn edge_enumeration(p: &PepsNetwork, layers: &[Vec<C64>]) -> Result<OracleResult> {
    let cost = edge_enumeration_cost(p);
    if cost > ORACLE_BUDGET {
        return Err(Error::OracleBudget(format!("edge enumeration needs {cost:e} multiplications")));
    }
    let g = p.graph();
    let bond = p.bond_dim();
    let dd = bond * bond;
    let n_edges = g.edge_count();
    let total = dd.pow(n_edges as u32);
    // For each vertex, the edge id of each leg in ascending-neighbor order.
    let legs: Vec<Vec<usize>> =
        (0..g.vertex_count()).map(|v| g.neighbors(v).iter().map(|&n| g.edge_id(v, n).unwrap()).collect()).collect();
    let chunk_sum = |start: usize| -> C64 {
        let mut digits = vec![0usize; n_edges];
        let mut sum = c(0.0, 0.0);
        for cfg in start..(start + CHUNK).min(total) {
            let mut rest = cfg;
            for dgt in digits.iter_mut() {
                *dgt = rest % dd;
                rest /= dd;
            }
            let mut prod = c(1.0, 0.0);
            for (v, vlegs) in legs.iter().enumerate() {
                let (mut x, mut y) = (0, 0);
                for &e in vlegs {
                    x = x * bond + digits[e] / bond;
                    y = y * bond + digits[e] % bond;
                }
                let x_dim = bond.pow(vlegs.len() as u32);
                prod *= layers[v][x * x_dim + y];
            }
            sum += prod;
        }
        sum
    };
    let starts: Vec<usize> = (0..total).step_by(CHUNK).collect();
    let partial: Vec<C64> = starts.par_iter().map(|&s| chunk_sum(s)).collect();
    Ok(OracleResult { value: pairwise_sum(&partial), method: OracleMethod::EdgeEnumeration, cost })
}

fn pairwise_sum(xs: &[C64]) -> C64 {
    match xs.len() {
        0 => c(0.0, 0.0),
        1 => xs[0],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Dense tensor whose legs are labelled by edge id, each of dimension `D²`.
struct Labeled {
    legs: Vec<usize>,
    data: Vec<C64>,
}

fn vertex_labeled(p: &PepsNetwork, v: usize, layer: &[C64]) -> Labeled {
    let g = p.graph();
    let bond = p.bond_dim();
    let k = g.degree(v);
    let x_dim = bond.pow(k as u32);
    let dd = bond * bond;
    let mut data = vec![c(0.0, 0.0); dd.pow(k as u32)];
    for (idx, slot) in data.iter_mut().enumerate() {
        // idx = Σ s_l·(D²)^{k−1−l}, s_l = ket_l·D + bra_l.
        let (mut x, mut y, mut rest) = (0, 0, idx);
        let mut kets = vec![0; k];
        let mut bras = vec![0; k];
        for l in (0..k).rev() {
            let s = rest % dd;
            rest /= dd;
            kets[l] = s / bond;
            bras[l] = s % bond;
        }
        for l in 0..k {
            x = x * bond + kets[l];
            y = y * bond + bras[l];
        }
        *slot = layer[x * x_dim + y];
    }
    Labeled { legs: g.neighbors(v).iter().map(|&n| g.edge_id(v, n).unwrap()).collect(), data }
}

fn strides(n: usize, dd: usize) -> Vec<usize> {
    let mut s = vec![1; n];
    for i in (0..n.saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dd;
    }
    s
}

/// Naive pairwise contraction over shared labels.
fn contract_labeled(a: &Labeled, b: &Labeled, dd: usize, cost: &mut f64) -> Labeled {
    let shared: Vec<usize> = a.legs.iter().copied().filter(|l| b.legs.contains(l)).collect();
    let a_free: Vec<usize> = a.legs.iter().copied().filter(|l| !shared.contains(l)).collect();
    let b_free: Vec<usize> = b.legs.iter().copied().filter(|l| !shared.contains(l)).collect();
    let out_legs: Vec<usize> = a_free.iter().chain(&b_free).copied().collect();
    let sa = strides(a.legs.len(), dd);
    let sb = strides(b.legs.len(), dd);
    let pos_a = |l: usize| a.legs.iter().position(|&x| x == l).unwrap();
    let pos_b = |l: usize| b.legs.iter().position(|&x| x == l).unwrap();
    let out_len = dd.pow(out_legs.len() as u32);
    let sum_len = dd.pow(shared.len() as u32);
    let mut data = vec![c(0.0, 0.0); out_len];
    for (o, slot) in data.iter_mut().enumerate() {
        let mut base_a = 0;
        let mut base_b = 0;
        let mut rest = o;
        for (i, &l) in out_legs.iter().enumerate().rev() {
            let digit = rest % dd;
            rest /= dd;
            if i < a_free.len() {
                base_a += digit * sa[pos_a(l)];
            } else {
                base_b += digit * sb[pos_b(l)];
            }
        }
        let mut s = c(0.0, 0.0);
        for t in 0..sum_len {
            let (mut ia, mut ib, mut r) = (base_a, base_b, t);
            for &l in shared.iter().rev() {
                let digit = r % dd;
                r /= dd;
                ia += digit * sa[pos_a(l)];
                ib += digit * sb[pos_b(l)];
            }
            s += a.data[ia] * b.data[ib];
        }
        *slot = s;
    }
    *cost += (out_len * sum_len) as f64;
    Labeled { legs: out_legs, data }
}

/// Estimated multiplications for contracting in `order`.
pub fn sequential_cost(p: &PepsNetwork, order: &[usize]) -> f64 {
    let g = p.graph();
    let dd = (p.bond_dim() * p.bond_dim()) as f64;
    let mut open: Vec<usize> = Vec::new();
    let mut cost = 0.0;
    for &v in order {
        let legs: Vec<usize> = g.neighbors(v).iter().map(|&n| g.edge_id(v, n).unwrap()).collect();
        let shared = legs.iter().filter(|l| open.contains(l)).count();
        let out = open.len() + legs.len() - 2 * shared;
        cost += dd.powi((out + shared) as i32);
        open.retain(|l| !legs.contains(l));
        open.extend(legs.iter().filter(|l| !open.contains(l)).copied().collect::<Vec<_>>());
    }
    cost
}

fn sequential(p: &PepsNetwork, layers: &[Vec<C64>], order: &[usize]) -> Result<OracleResult> {
    let g = p.graph();
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..g.vertex_count()).collect::<Vec<_>>() {
        return Err(Error::Invalid("contraction order must be a permutation of the vertices".into()));
    }
    let estimate = sequential_cost(p, order);
    if estimate > ORACLE_BUDGET {
        return Err(Error::OracleBudget(format!("sequential contraction needs {estimate:e} multiplications")));
    }
    let dd = p.bond_dim() * p.bond_dim();
    let mut cost = 0.0;
    let mut acc = Labeled { legs: vec![], data: vec![c(1.0, 0.0)] };
    for &v in order {
        acc = contract_labeled(&acc, &vertex_labeled(p, v, &layers[v]), dd, &mut cost);
    }
    debug_assert!(acc.legs.is_empty());
    Ok(OracleResult { value: acc.data[0], method: OracleMethod::SequentialContraction, cost })
}

/// Contract the network with `ops` inserted, choosing edge enumeration when
/// it fits the budget and sequential contraction along `order` otherwise.
pub fn exact_contract(p: &PepsNetwork, ops: &[(usize, Matrix)], order: Option<&[usize]>) -> Result<OracleResult> {
    let layers = layers(p, ops)?;
    if edge_enumeration_cost(p) <= ORACLE_BUDGET {
        return edge_enumeration(p, &layers);
    }
    let default: Vec<usize> = (0..p.graph().vertex_count()).collect();
    sequential(p, &layers, order.unwrap_or(&default)).map_err(|e| match e {
        Error::OracleBudget(msg) => Error::OracleBudget(format!(
            "edge enumeration needs {:e} and {msg}; budget {ORACLE_BUDGET:e}",
            edge_enumeration_cost(p)
        )),
        other => other,
    })
}

/// Force one algorithm (used to cross-check the two).
pub fn exact_contract_with(
    p: &PepsNetwork,
    ops: &[(usize, Matrix)],
    method: OracleMethod,
    order: Option<&[usize]>,
) -> Result<OracleResult> {
    let layers = layers(p, ops)?;
    match method {
        OracleMethod::EdgeEnumeration => edge_enumeration(p, &layers),
        OracleMethod::SequentialContraction => {
            let default: Vec<usize> = (0..p.graph().vertex_count()).collect();
            sequential(p, &layers, order.unwrap_or(&default))
        }
    }
}

/// `Z = ⟨ψ|ψ⟩`.
pub fn exact_norm(p: &PepsNetwork) -> Result<OracleResult> {
    exact_contract(p, &[], None)
}

/// `⟨ψ|O_A|ψ⟩ / ⟨ψ|ψ⟩`.
pub fn exact_expectation(p: &PepsNetwork, op: &[(usize, Matrix)]) -> Result<OracleResult> {
    let z = exact_norm(p)?;
    let num = exact_contract(p, op, None)?;
    Ok(OracleResult { value: num.value / z.value, method: z.method, cost: z.cost + num.cost })
}

/// `⟨O_A O_B⟩ − ⟨O_A⟩⟨O_B⟩` for disjoint supports.
pub fn exact_connected_correlator(
    p: &PepsNetwork,
    op_a: &[(usize, Matrix)],
    op_b: &[(usize, Matrix)],
) -> Result<OracleResult> {
    if op_a.iter().any(|(a, _)| op_b.iter().any(|(b, _)| a == b)) {
        return Err(Error::Invalid("correlator supports must be disjoint".into()));
    }
    let z = exact_norm(p)?;
    let za = exact_contract(p, op_a, None)?;
    let zb = exact_contract(p, op_b, None)?;
    let both: Vec<(usize, Matrix)> = op_a.iter().chain(op_b).cloned().collect();
    let zab = exact_contract(p, &both, None)?;
    let value = zab.value / z.value - (za.value / z.value) * (zb.value / z.value);
    Ok(OracleResult { value, method: z.method, cost: z.cost + za.cost + zb.cost + zab.cost })
}
