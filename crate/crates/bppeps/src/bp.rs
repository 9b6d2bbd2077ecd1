//! The message-passing map, fixed-point iteration, and analytic thresholds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::peps::{channel_matrix, PepsNetwork};
use crate::tensor::{add_muls, counted, eigh, trace_norm_hermitian, Matrix};

/// Eigenvalues below this are clipped to zero after each update.
pub const CLIP_FLOOR: f64 = -1e-10;
/// Smallest admissible unnormalized message trace.
pub const TRACE_FLOOR: f64 = 1e-12;
pub const DEFAULT_TOL: f64 = 1e-12;
/// Steps below this size are excluded from empirical contraction ratios.
pub const RATIO_FLOOR: f64 = 1e-12;

/// One positive unit-trace `D × D` matrix per directed edge, indexed by the
/// graph's directed-edge ids.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageSet {
    keys: Vec<(usize, usize)>,
    msgs: Vec<Matrix>,
}

#[derive(Serialize, Deserialize)]
struct MessageRepr {
    messages: std::collections::BTreeMap<String, Matrix>,
}

impl MessageSet {
    /// `1/D` on every directed edge.
    pub fn uniform(g: &Graph, bond: usize) -> Self {
        let m = Matrix::identity(bond).scale_real(1.0 / bond as f64);
        MessageSet { keys: g.directed_edges().to_vec(), msgs: vec![m; g.directed_edges().len()] }
    }

    pub fn from_messages(g: &Graph, msgs: Vec<Matrix>) -> Result<Self> {
        if msgs.len() != g.directed_edges().len() {
            return Err(Error::DimensionMismatch(format!(
                "{} messages for {} directed edges",
                msgs.len(),
                g.directed_edges().len()
            )));
        }
        Ok(MessageSet { keys: g.directed_edges().to_vec(), msgs })
    }

    pub fn get(&self, id: usize) -> &Matrix {
        &self.msgs[id]
    }

    pub fn set(&mut self, id: usize, m: Matrix) {
        self.msgs[id] = m;
    }

    pub fn messages(&self) -> &[Matrix] {
        &self.msgs
    }

    pub fn keys(&self) -> &[(usize, usize)] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.msgs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.msgs.is_empty()
    }

    /// `max_e ‖μ_e − ν_e‖₁`.
    pub fn distance(&self, other: &MessageSet) -> f64 {
        self.msgs.iter().zip(&other.msgs).map(|(a, b)| trace_norm_hermitian(&a.sub(b))).fold(0.0, f64::max)
    }

    /// Per-edge trace distances.
    pub fn edge_distances(&self, other: &MessageSet) -> Vec<f64> {
        self.msgs.iter().zip(&other.msgs).map(|(a, b)| trace_norm_hermitian(&a.sub(b))).collect()
    }

    /// Check positivity (floor `−1e-10`) and unit trace (`1e-12`).
    pub fn validate(&self) -> Result<()> {
        for (&(s, t), m) in self.keys.iter().zip(&self.msgs) {
            if !m.is_hermitian(1e-10) {
                return Err(Error::Invalid(format!("message {s}->{t} is not Hermitian")));
            }
            let (vals, _) = eigh(m)?;
            if vals[0] < CLIP_FLOOR {
                return Err(Error::Invalid(format!("message {s}->{t} has eigenvalue {}", vals[0])));
            }
            if (m.trace().re - 1.0).abs() > 1e-12 {
                return Err(Error::Invalid(format!("message {s}->{t} has trace {}", m.trace())));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let messages = self.keys.iter().zip(&self.msgs).map(|(&(s, t), m)| (format!("{s}->{t}"), m.clone())).collect();
        serde_json::to_value(MessageRepr { messages }).expect("messages serialize")
    }

    pub fn from_json(g: &Graph, value: &serde_json::Value) -> Result<Self> {
        let repr: MessageRepr = serde_json::from_value(value.clone())?;
        let mut msgs = Vec::with_capacity(g.directed_edges().len());
        for &(s, t) in g.directed_edges() {
            let key = format!("{s}->{t}");
            msgs.push(
                repr.messages.get(&key).cloned().ok_or_else(|| Error::Invalid(format!("missing message {key}")))?,
            );
        }
        Self::from_messages(g, msgs)
    }
}

/// Precomputed dense channels `Φ_(v,n)` for every directed edge.
#[derive(Clone, Debug)]
pub struct BpContext {
    bond: usize,
    keys: Vec<(usize, usize)>,
    channels: Vec<Matrix>,
    inputs: Vec<Vec<usize>>,
}

impl BpContext {
    pub fn new(p: &PepsNetwork) -> Self {
        let g = p.graph();
        let bond = p.bond_dim();
        let layers: Vec<Matrix> = (0..g.vertex_count()).map(|v| p.double_layer(v)).collect();
        let mut channels = Vec::with_capacity(g.directed_edges().len());
        let mut inputs = Vec::with_capacity(g.directed_edges().len());
        for &(v, n) in g.directed_edges() {
            let pos = g.leg_of(v, n).unwrap();
            channels.push(channel_matrix(&layers[v], pos, g.degree(v), bond));
            inputs.push(g.neighbors(v).iter().filter(|&&m| m != n).map(|&m| g.directed_id(m, v).unwrap()).collect());
        }
        BpContext { bond, keys: g.directed_edges().to_vec(), channels, inputs }
    }

    /// Context holding channels only for edges flagged in `active`; use
    /// with `apply(_, Some(active))`. Double layers are built only for
    /// sources of active edges.
    pub fn restricted(p: &PepsNetwork, active: &[bool]) -> Self {
        let g = p.graph();
        let bond = p.bond_dim();
        let mut layers: Vec<Option<Matrix>> = vec![None; g.vertex_count()];
        let mut channels = Vec::with_capacity(g.directed_edges().len());
        let mut inputs = Vec::with_capacity(g.directed_edges().len());
        for (e, &(v, n)) in g.directed_edges().iter().enumerate() {
            if !active[e] {
                channels.push(Matrix::zeros(0, 0));
                inputs.push(Vec::new());
                continue;
            }
            let layer = layers[v].get_or_insert_with(|| p.double_layer(v));
            channels.push(channel_matrix(layer, g.leg_of(v, n).unwrap(), g.degree(v), bond));
            inputs.push(g.neighbors(v).iter().filter(|&&m| m != n).map(|&m| g.directed_id(m, v).unwrap()).collect());
        }
        BpContext { bond, keys: g.directed_edges().to_vec(), channels, inputs }
    }

    /// Unnormalized `f_e(μ) = Φ_e(⊗ μ_in)`.
    pub fn raw_update(&self, e: usize, mu: &MessageSet) -> Matrix {
        let mut x = Matrix::identity(1);
        for &i in &self.inputs[e] {
            x = x.kron(mu.get(i));
        }
        let vx = Matrix::from_vec(x.rows() * x.cols(), 1, x.into_data()).unwrap();
        Matrix::from_vec(self.bond, self.bond, self.channels[e].mul(&vx).into_data()).unwrap()
    }

    /// Normalized, positivity-repaired update of one edge; returns whether
    /// an eigenvalue was clipped.
    pub fn update_edge(&self, e: usize, mu: &MessageSet) -> Result<(Matrix, bool)> {
        let h = self.raw_update(e, mu).hermitian_part();
        let (vals, vecs) = eigh(&h)?;
        let (h, clipped) = if vals[0] < CLIP_FLOOR {
            let clipped: Vec<f64> = vals.iter().map(|&x| x.max(0.0)).collect();
            (vecs.mul(&Matrix::from_real_diag(&clipped)).mul(&vecs.adjoint()).hermitian_part(), true)
        } else {
            (h, false)
        };
        let tr = h.trace().re;
        if tr.is_nan() || tr <= TRACE_FLOOR {
            let (src, dst) = self.keys[e];
            return Err(Error::VanishingTrace { src, dst, trace: tr });
        }
        add_muls(self.bond as u64 * self.bond as u64);
        Ok((h.scale_real(1.0 / tr), clipped))
    }

    /// One synchronous application of the map on the edges flagged in
    /// `active` (all edges when `None`); inactive edges are copied.
    pub fn apply(&self, mu: &MessageSet, active: Option<&[bool]>) -> Result<(MessageSet, usize)> {
        type EdgeUpdate = Result<(Option<(Matrix, bool)>, u64)>;
        let results: Vec<EdgeUpdate> = (0..self.keys.len())
            .into_par_iter()
            .map(|e| {
                if active.is_some_and(|a| !a[e]) {
                    return Ok((None, 0));
                }
                let (r, n) = counted(|| self.update_edge(e, mu));
                r.map(|x| (Some(x), n))
            })
            .collect();
        let mut out = mu.clone();
        let mut clips = 0;
        let mut muls = 0;
        for (e, r) in results.into_iter().enumerate() {
            let (upd, n) = r?;
            muls += n;
            if let Some((m, clipped)) = upd {
                clips += clipped as usize;
                out.msgs[e] = m;
            }
        }
        add_muls(muls);
        Ok((out, clips))
    }
}

/// `[F(μ)]_e = f_e(μ)/Tr f_e(μ)`, computed synchronously.
pub fn apply_message_map(p: &PepsNetwork, mu: &MessageSet) -> Result<MessageSet> {
    Ok(BpContext::new(p).apply(mu, None)?.0)
}

/// Per-iteration convergence record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLog {
    /// `d_t = ‖μ^{(t+1)} − μ^{(t)}‖_max`.
    pub distances: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `d_{t+1}/d_t`.
    pub ratios: Vec<f64>,
    pub clips: usize,
}

impl ConvergenceLog {
    /// Largest `d_{t+1}/d_t` over steps whose `d_t` is at least `floor`;
    /// below it the ratio measures roundoff rather than contraction.
    pub fn max_ratio(&self, floor: f64) -> Option<f64> {
        self.distances
            .windows(2)
            .filter(|w| w[0] >= floor)
            .map(|w| w[1] / w[0])
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for (t, d) in self.distances.iter().enumerate() {
            let ratio = if t > 0 { self.ratios.get(t - 1).copied() } else { None };
            let line = serde_json::json!({ "iteration": t + 1, "distance": d, "ratio": ratio });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

/// Iterate from `start` until the sup-edge change is at most `tol`.
/// Inactive edges (when `active` is given) stay frozen.
pub fn iterate_from(
    ctx: &BpContext,
    start: MessageSet,
    tol: f64,
    max_iter: usize,
    active: Option<&[bool]>,
) -> Result<(MessageSet, ConvergenceLog)> {
    if !(tol > 0.0) {
        return Err(Error::Invalid(format!("tolerance {tol} must be positive")));
    }
    let mut mu = start;
    let mut log = ConvergenceLog::default();
    for _ in 0..max_iter {
        let (next, clips) = ctx.apply(&mu, active)?;
        let d = next.distance(&mu);
        if let Some(&prev) = log.distances.last() {
            log.ratios.push(if prev > 0.0 { d / prev } else { 0.0 });
        }
        log.distances.push(d);
        log.clips += clips;
        log.iterations += 1;
        mu = next;
        if d <= tol {
            log.converged = true;
            break;
        }
    }
    Ok((mu, log))
}

/// Fixed point from uniform messages.
pub fn find_fixed_point(p: &PepsNetwork, tol: f64, max_iter: usize) -> Result<(MessageSet, ConvergenceLog)> {
    let ctx = BpContext::new(p);
    iterate_from(&ctx, MessageSet::uniform(p.graph(), p.bond_dim()), tol, max_iter, None)
}

/// Trajectory `[μ, F(μ), …, F^steps(μ)]`.
pub fn seeded_iterate(p: &PepsNetwork, start: &MessageSet, steps: usize) -> Result<Vec<MessageSet>> {
    let ctx = BpContext::new(p);
    let mut out = vec![start.clone()];
    for _ in 0..steps {
        let next = ctx.apply(out.last().unwrap(), None)?.0;
        out.push(next);
    }
    Ok(out)
}

/// `ceil(log(d₀/tol)/log(1/q)) + 1`, the iteration budget implied by a
/// contraction constant `q < 1` and initial step `d₀`.
pub fn geometric_iteration_bound(d0: f64, tol: f64, q: f64) -> usize {
    if d0 <= tol {
        return 1;
    }
    if q <= 0.0 {
        return 2;
    }
    ((d0 / tol).ln() / (1.0 / q).ln()).ceil() as usize + 1
}

/// Closed-form thresholds for bond dimension `D`, degree `Δ`, and `ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub bond_dim: usize,
    pub max_degree: usize,
    pub epsilon: f64,
    pub eps_star: f64,
    pub q: f64,
    pub c0: f64,
    pub eta: f64,
    pub eps_double_star: f64,
    /// `log(ε*/ε)`; `None` at `ε = 0` (infinitely fast decay).
    pub inv_xi_star: Option<f64>,
}

impl Thresholds {
    pub fn xi_star(&self) -> Option<f64> {
        self.inv_xi_star.map(|r| 1.0 / r)
    }

    /// Whether the Banach contraction guarantee applies.
    pub fn contracting(&self) -> bool {
        self.epsilon < self.eps_star
    }
}

pub fn q_of(max_degree: usize, epsilon: f64) -> f64 {
    2.0 * (max_degree as f64 - 1.0) * epsilon / (1.0 - epsilon)
}

pub fn eta_of(bond: usize, max_degree: usize, epsilon: f64) -> f64 {
    let d = bond as f64;
    2.0 * d.powf(2.0 - max_degree as f64 / 2.0) * (d + 2.0) * epsilon
}

pub fn compute_thresholds(bond: usize, max_degree: usize, epsilon: f64) -> Thresholds {
    let (d, delta) = (bond as f64, max_degree as f64);
    let eps_star = 1.0 / (2.0 * delta - 1.0);
    let c0 = (2.0 * std::f64::consts::E * delta).ln() + 0.5;
    let decay_branch =
        d.powf(delta / 2.0 - 2.0) / (2.0 * (d + 2.0)) * (-0.75 * delta).exp() * (2.0 * delta).powf(-delta / 2.0);
    let eps_double_star = decay_branch.min(1.0 / (1.0 + 2.0 * d.sqrt())).min(1.0 / d);
    Thresholds {
        bond_dim: bond,
        max_degree,
        epsilon,
        eps_star,
        q: q_of(max_degree, epsilon),
        c0,
        eta: eta_of(bond, max_degree, epsilon),
        eps_double_star,
        inv_xi_star: if epsilon > 0.0 { Some((eps_star / epsilon).ln()) } else { None },
    }
}
