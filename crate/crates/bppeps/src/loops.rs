//! BP normalization, excitation projectors, and loop activities.
//!
//! Conventions. A doubled edge index is `x = j·D + j'` with `j` the ket and
//! `j'` the bra bond index. Objects on the two sides of an edge are paired
//! with `⟨A, B⟩ = Σ_x A[x]·B[x]`, i.e. `Tr(A Bᵀ)` for matrices. Messages are
//! stored in the same `(ket, bra)` layout, so `I_vw = ⟨μ_vw, μ_wv⟩`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bp::MessageSet;
use crate::error::{Error, Result};
use crate::graph::{AnchoredLoop, Graph, Loop};
use crate::peps::PepsNetwork;
use crate::tensor::{c, contract, DenseTensor, Matrix, C64};

/// Overlap guard for excitation projectors.
pub const OVERLAP_GUARD: f64 = 1e-12;

/// Per-edge overlaps `I_vw` and per-vertex BP values `Z^(v)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpNormalization {
    /// Indexed by undirected edge id.
    pub overlaps: Vec<f64>,
    pub z_v: Vec<f64>,
    pub log_z_bp: f64,
}

/// `⊗_n M_n` over the neighbors of `v` in ascending order.
fn incoming_product(g: &Graph, v: usize, mu: &MessageSet) -> Matrix {
    let mut x = Matrix::identity(1);
    for &n in g.neighbors(v) {
        x = x.kron(mu.get(g.directed_id(n, v).unwrap()));
    }
    x
}

/// `Z^(v) = ⟨G_v, ⊗_n μ_(n,v)⟩ / Π_n √I_vn` for an arbitrary double layer.
fn vertex_value(g: &Graph, v: usize, layer: &Matrix, mu: &MessageSet, overlaps: &[f64]) -> C64 {
    let x = incoming_product(g, v, mu);
    let denom: f64 = g.neighbors(v).iter().map(|&n| overlaps[g.edge_id(v, n).unwrap()].sqrt()).product();
    layer.pair(&x) / denom
}

pub fn bp_normalization(p: &PepsNetwork, mu: &MessageSet) -> Result<BpNormalization> {
    let g = p.graph();
    let mut overlaps = Vec::with_capacity(g.edge_count());
    for &(v, w) in g.edges() {
        let i = mu.get(g.directed_id(v, w).unwrap()).pair(mu.get(g.directed_id(w, v).unwrap()));
        if !(i.re > 0.0) || i.im.abs() > 1e-9 * i.re.abs().max(1e-300) {
            return Err(Error::IllConditioned(format!("overlap I_{v}{w} = {i}")));
        }
        overlaps.push(i.re);
    }
    let mut z_v = Vec::with_capacity(g.vertex_count());
    for v in 0..g.vertex_count() {
        let z = vertex_value(g, v, &p.double_layer(v), mu, &overlaps);
        if !(z.re > 0.0) || z.im.abs() > 1e-9 * z.re.abs() {
            return Err(Error::IllConditioned(format!("Z^({v}) = {z}")));
        }
        z_v.push(z.re);
    }
    let log_z_bp = z_v.iter().map(|z| z.ln()).sum();
    Ok(BpNormalization { overlaps, z_v, log_z_bp })
}

/// Recompute the normalization only where it can differ from `base`:
/// overlaps on edges with a changed message in either direction, and
/// `Z^(v)` at changed vertices or vertices with a changed incident edge.
/// Unchanged entries are copied, so the result equals a full
/// recomputation whenever the unchanged inputs are bitwise identical.
pub fn bp_normalization_update(
    p: &PepsNetwork,
    mu: &MessageSet,
    base: &BpNormalization,
    changed_edges: &[bool],
    changed_vertices: &[bool],
) -> Result<BpNormalization> {
    let g = p.graph();
    let mut overlaps = base.overlaps.clone();
    let mut touched = changed_vertices.to_vec();
    for (id, &(v, w)) in g.edges().iter().enumerate() {
        let (fwd, bwd) = (g.directed_id(v, w).unwrap(), g.directed_id(w, v).unwrap());
        if !(changed_edges[fwd] || changed_edges[bwd]) {
            continue;
        }
        touched[v] = true;
        touched[w] = true;
        let i = mu.get(fwd).pair(mu.get(bwd));
        if !(i.re > 0.0) || i.im.abs() > 1e-9 * i.re.abs().max(1e-300) {
            return Err(Error::IllConditioned(format!("overlap I_{v}{w} = {i}")));
        }
        overlaps[id] = i.re;
    }
    let mut z_v = base.z_v.clone();
    for v in (0..g.vertex_count()).filter(|&v| touched[v]) {
        let z = vertex_value(g, v, &p.double_layer(v), mu, &overlaps);
        if !(z.re > 0.0) || z.im.abs() > 1e-9 * z.re.abs() {
            return Err(Error::IllConditioned(format!("Z^({v}) = {z}")));
        }
        z_v[v] = z.re;
    }
    let log_z_bp = z_v.iter().map(|z| z.ln()).sum();
    Ok(BpNormalization { overlaps, z_v, log_z_bp })
}

/// `Π⊥_{X,X'}(Y) = Y − Tr(XY)/Tr(XX')·X'`.
pub fn excitation_projector_apply(x: &Matrix, xp: &Matrix, y: &Matrix) -> Result<Matrix> {
    let overlap = x.mul(xp).trace();
    if overlap.norm() < OVERLAP_GUARD {
        return Err(Error::ProjectorOverlap(overlap.norm()));
    }
    let coef = x.mul(y).trace() / overlap;
    Ok(y.sub(&xp.scale(coef)))
}

/// Which observable networks a loop activity was evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dressing {
    None,
    A,
    B,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopActivity {
    #[serde(rename = "loop")]
    pub lp: Loop,
    pub value: C64,
    pub dressing: Dressing,
}

/// `G_v` regrouped as a tensor with one doubled leg (dimension `D²`) per
/// neighbor, ascending.
pub fn doubled_vertex_tensor(layer: &Matrix, k: usize, bond: usize) -> DenseTensor {
    let mut shape = vec![bond; 2 * k];
    if k == 0 {
        shape = vec![];
    }
    let t = DenseTensor::new(shape, layer.data().to_vec()).expect("double layer has D^k x D^k entries");
    if k == 0 {
        return t;
    }
    let perm: Vec<usize> = (0..k).flat_map(|l| [l, k + l]).collect();
    t.permute(&perm).unwrap().reshape(vec![bond * bond; k]).unwrap()
}

fn vec_of(m: &Matrix) -> DenseTensor {
    DenseTensor::new(vec![m.rows() * m.cols()], m.data().to_vec()).unwrap()
}

/// Everything needed to evaluate many loop activities on one fixed point.
pub struct LoopContext<'a> {
    pub network: &'a PepsNetwork,
    pub messages: &'a MessageSet,
    pub norm: &'a BpNormalization,
    doubled: Vec<DenseTensor>,
}

impl<'a> LoopContext<'a> {
    pub fn new(network: &'a PepsNetwork, messages: &'a MessageSet, norm: &'a BpNormalization) -> Self {
        let g = network.graph();
        let bond = network.bond_dim();
        let doubled =
            (0..g.vertex_count()).map(|v| doubled_vertex_tensor(&network.double_layer(v), g.degree(v), bond)).collect();
        LoopContext { network, messages, norm, doubled }
    }

    /// Context with doubled tensors built only at vertices flagged in
    /// `needed`; loops must stay inside that set.
    pub fn partial(
        network: &'a PepsNetwork,
        messages: &'a MessageSet,
        norm: &'a BpNormalization,
        needed: &[bool],
    ) -> Self {
        let g = network.graph();
        let bond = network.bond_dim();
        let doubled = (0..g.vertex_count())
            .map(|v| {
                if needed[v] {
                    doubled_vertex_tensor(&network.double_layer(v), g.degree(v), bond)
                } else {
                    DenseTensor::zeros(vec![0])
                }
            })
            .collect();
        LoopContext { network, messages, norm, doubled }
    }

    pub fn graph(&self) -> &Graph {
        self.network.graph()
    }

    /// Doubled-leg tensor for `v`, optionally dressed by a physical operator.
    pub fn doubled_tensor(&self, v: usize, op: Option<&Matrix>) -> Result<DenseTensor> {
        match op {
            None => Ok(self.doubled[v].clone()),
            Some(o) => {
                let layer = self.network.dressed_double_layer(v, o)?;
                Ok(doubled_vertex_tensor(&layer, self.graph().degree(v), self.network.bond_dim()))
            }
        }
    }

    /// `μ_(n,v)/√I_vn` as a doubled vector.
    fn boundary_vector(&self, n: usize, v: usize) -> DenseTensor {
        let g = self.graph();
        let i = self.norm.overlaps[g.edge_id(v, n).unwrap()];
        vec_of(&self.messages.get(g.directed_id(n, v).unwrap()).scale_real(1.0 / i.sqrt()))
    }

    /// `P⊥[x_v, x_w] = δ − μ_(w,v)[x_v]·μ_(v,w)[x_w]/I_vw`, a `D² × D²`
    /// superoperator matrix on the doubled edge `{v, w}`.
    pub fn projector_matrix(&self, v: usize, w: usize) -> Result<Matrix> {
        let g = self.graph();
        let i = self.norm.overlaps[g.edge_id(v, w).unwrap()];
        if i < OVERLAP_GUARD {
            return Err(Error::ProjectorOverlap(i));
        }
        let into_v = self.messages.get(g.directed_id(w, v).unwrap());
        let into_w = self.messages.get(g.directed_id(v, w).unwrap());
        let dd = into_v.data().len();
        Ok(Matrix::from_fn(dd, dd, |a, b| {
            let delta = if a == b { c(1.0, 0.0) } else { c(0.0, 0.0) };
            delta - into_v.data()[a] * into_w.data()[b] / i
        }))
    }

    /// Vertex `v` of loop `l` with messages closed on legs outside the loop,
    /// `P⊥` absorbed on loop legs where `v` is the smaller endpoint, divided
    /// by `norm_v`. Open legs are labelled by undirected edge id.
    pub fn decorated_vertex(&self, l: &Loop, v: usize, base: DenseTensor, norm_v: f64) -> Result<DenseTensor> {
        let g = self.graph();
        let nbrs = g.neighbors(v);
        let mut t = base.scale(c(1.0 / norm_v, 0.0));
        // Legs still present, each tagged with its neighbor.
        let mut legs: Vec<usize> = nbrs.to_vec();
        for &n in nbrs {
            let e = g.edge_id(v, n).unwrap();
            let pos = legs.iter().position(|&x| x == n).unwrap();
            if l.edges.binary_search(&e).is_err() {
                t = contract(&t, &self.boundary_vector(n, v), &[(pos, 0)])?;
                legs.remove(pos);
            } else if v < n {
                let proj = DenseTensor::from_matrix(&self.projector_matrix(v, n)?);
                t = contract(&t, &proj, &[(pos, 0)])?;
                // Contracted leg moves to the end.
                legs.remove(pos);
                legs.push(n);
            }
        }
        let labels = legs.iter().map(|&n| g.edge_id(v, n).unwrap().to_string()).collect();
        t.with_labels(labels)
    }

    /// Contract decorated vertices of `l` in the given order.
    pub fn contract_loop(
        &self,
        l: &Loop,
        order: &[usize],
        tensor_for: &dyn Fn(usize) -> Result<(DenseTensor, f64)>,
    ) -> Result<C64> {
        let mut acc = DenseTensor::scalar(c(1.0, 0.0)).with_labels(vec![])?;
        for &v in order {
            let (base, norm_v) = tensor_for(v)?;
            let t = self.decorated_vertex(l, v, base, norm_v)?;
            let acc_labels = acc.labels().unwrap().to_vec();
            let t_labels = t.labels().unwrap().to_vec();
            let pairs: Vec<(usize, usize)> = acc_labels
                .iter()
                .enumerate()
                .filter_map(|(i, lab)| t_labels.iter().position(|x| x == lab).map(|j| (i, j)))
                .collect();
            acc = contract(&acc, &t, &pairs)?;
        }
        if acc.rank() != 0 {
            return Err(Error::Invalid("loop contraction left open legs".into()));
        }
        Ok(acc.data()[0])
    }

    /// Undressed activity `Z_ℓ`.
    pub fn activity(&self, l: &Loop) -> Result<C64> {
        self.contract_loop(l, &l.vertices, &|v| Ok((self.doubled[v].clone(), self.norm.z_v[v])))
    }

    /// Activity with physical operators inserted at `insertions`, every
    /// vertex normalized by the undressed `Z^(w)`.
    pub fn dressed_numerator(&self, l: &Loop, insertions: &BTreeMap<usize, &Matrix>) -> Result<C64> {
        self.contract_loop(l, &l.vertices, &|v| {
            Ok((self.doubled_tensor(v, insertions.get(&v).copied())?, self.norm.z_v[v]))
        })
    }

    /// BP value of a dressed vertex, `Z^{(v),O}`.
    pub fn dressed_vertex_value(&self, v: usize, op: &Matrix) -> Result<C64> {
        let layer = self.network.dressed_double_layer(v, op)?;
        Ok(vertex_value(self.graph(), v, &layer, self.messages, &self.norm.overlaps))
    }

    /// `⟨O⟩_BP` at one vertex: `Z^{(v),O}/Z^(v)` with both values taken
    /// from the same complex contraction, so an identity insertion gives
    /// exactly 1.
    pub fn bp_ratio(&self, v: usize, op: &Matrix) -> Result<C64> {
        let plain = vertex_value(self.graph(), v, &self.network.double_layer(v), self.messages, &self.norm.overlaps);
        let dressed = self.dressed_vertex_value(v, op)?;
        if dressed.norm() < 1e-300 {
            return Err(Error::BpGuard(format!("dressed BP value at vertex {v} vanishes")));
        }
        Ok(dressed / plain)
    }

    /// `Π_{w∈W} ‖decorated T_w‖₂`, an upper bound on `|Z_ℓ|`.
    pub fn vertex_cut_bound(&self, l: &Loop) -> Result<f64> {
        let mut bound = 1.0;
        for &v in &l.vertices {
            bound *= self.decorated_vertex(l, v, self.doubled[v].clone(), self.norm.z_v[v])?.frobenius_norm();
        }
        Ok(bound)
    }

    /// `‖Π⊥ ∘ Φ_(v,n)‖₂ / Z^(v)`: the single-excited-leg building block.
    pub fn excitation_block_norm(&self, v: usize, n: usize) -> Result<f64> {
        let g = self.graph();
        let pos = g.leg_of(v, n).ok_or_else(|| Error::Invalid(format!("{n} is not a neighbor of {v}")))?;
        let phi = crate::peps::channel_matrix(&self.network.double_layer(v), pos, g.degree(v), self.network.bond_dim());
        let proj = if v < n { self.projector_matrix(v, n)? } else { self.projector_matrix(n, v)?.transpose() };
        Ok(proj.transpose().mul(&phi).frobenius_norm() / self.norm.z_v[v])
    }
}

/// `Z_ℓ`: contraction of `(W, F)` with `P⊥` on `F`, BP messages on the
/// boundary, divided by `Π_{w∈W} Z^(w)`.
pub fn loop_activity(p: &PepsNetwork, mu: &MessageSet, norm: &BpNormalization, l: &Loop) -> Result<LoopActivity> {
    let ctx = LoopContext::new(p, mu, norm);
    Ok(LoopActivity { lp: l.clone(), value: ctx.activity(l)?, dressing: Dressing::None })
}

/// Activity on the dressed network `⟨ψ|O|ψ⟩`: operators inserted at their
/// vertices, and each dressed vertex normalized by its own BP value
/// `Z^{(w),O}` (undressed vertices by `Z^(w)`).
pub fn dressed_loop_activity(
    p: &PepsNetwork,
    mu: &MessageSet,
    norm: &BpNormalization,
    l: &AnchoredLoop,
    insertions: &[(usize, Matrix)],
) -> Result<LoopActivity> {
    let ctx = LoopContext::new(p, mu, norm);
    let mut map = BTreeMap::new();
    for (v, op) in insertions {
        if !l.anchors.iter().flatten().any(|a| a == v) {
            return Err(Error::Invalid(format!("operator at vertex {v} lies outside every anchor region")));
        }
        map.insert(*v, op);
    }
    let value = ctx.contract_loop(&l.lp, &l.lp.vertices, &|v| match map.get(&v) {
        None => Ok((ctx.doubled[v].clone(), norm.z_v[v])),
        Some(op) => {
            // Z^{(v),O} = Z^(v)·⟨O⟩_BP: divide by the ratio on top of the
            // undressed normalization.
            let r = ctx.bp_ratio(v, op)?;
            Ok((ctx.doubled_tensor(v, Some(op))?.scale(c(1.0, 0.0) / r), norm.z_v[v]))
        }
    })?;
    let in_a = map.keys().any(|v| l.lp.contains_vertex(*v) && l.anchors.first().is_some_and(|a| a.contains(v)));
    let in_b = map.keys().any(|v| l.lp.contains_vertex(*v) && l.anchors.get(1).is_some_and(|b| b.contains(v)));
    let dressing = match (in_a, in_b) {
        (false, false) => Dressing::None,
        (true, false) => Dressing::A,
        (false, true) => Dressing::B,
        (true, true) => Dressing::Both,
    };
    Ok(LoopActivity { lp: l.lp.clone(), value, dressing })
}
