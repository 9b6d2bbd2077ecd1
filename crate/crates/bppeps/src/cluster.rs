//! Clusters of loops, Ursell coefficients, the truncated free energy, and
//! cluster-corrected observables and connected correlators.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bp::{compute_thresholds, MessageSet};
use crate::error::{Error, Result};
use crate::graph::{AnchoredLoop, Graph, Loop};
use crate::loops::{BpNormalization, LoopContext};
use crate::peps::PepsNetwork;
use crate::tensor::{add_muls, c, counted, Matrix, C64};

pub const SCHEMA: &str = "bppeps/1";
/// Largest interaction graph for which Ursell coefficients are evaluated.
pub const MAX_URSELL_OCCURRENCES: usize = 12;
/// Guard on `|⟨O⟩_BP|` for the multiplicative estimator.
pub const BP_EXPECTATION_GUARD: f64 = 1e-10;

/// A multiset of loops, as `(loop index, multiplicity)` sorted by index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cluster {
    pub items: Vec<(usize, usize)>,
}

impl Cluster {
    pub fn single(i: usize) -> Self {
        Cluster { items: vec![(i, 1)] }
    }

    pub fn from_counts(counts: &BTreeMap<usize, usize>) -> Self {
        Cluster { items: counts.iter().map(|(&i, &a)| (i, a)).collect() }
    }

    pub fn weight(&self, loops: &[Loop]) -> usize {
        self.items.iter().map(|&(i, a)| a * loops[i].weight()).sum()
    }

    /// `n_W = Σ α_i`.
    pub fn occurrences(&self) -> usize {
        self.items.iter().map(|&(_, a)| a).sum()
    }

    /// `W! = Π α_i!`.
    pub fn factorial(&self) -> i64 {
        self.items.iter().map(|&(_, a)| (1..=a as i64).product::<i64>()).product()
    }

    pub fn touches(&self, loops: &[Loop], v: usize) -> bool {
        self.items.iter().any(|&(i, _)| loops[i].contains_vertex(v))
    }

    /// Union of vertex sets.
    pub fn support(&self, loops: &[Loop]) -> BTreeSet<usize> {
        self.items.iter().flat_map(|&(i, _)| loops[i].vertices.iter().copied()).collect()
    }
}

/// Interaction graph on loop occurrences: adjacent iff the loops share a
/// vertex (hence also when they share an edge) or are identical.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionGraph {
    pub occurrences: Vec<usize>,
    pub adjacency: Vec<Vec<bool>>,
}

impl InteractionGraph {
    pub fn build(w: &Cluster, loops: &[Loop]) -> Self {
        let occurrences: Vec<usize> = w.items.iter().flat_map(|&(i, a)| std::iter::repeat_n(i, a)).collect();
        let n = occurrences.len();
        let adjacency = (0..n)
            .map(|x| {
                (0..n)
                    .map(|y| {
                        x != y
                            && (occurrences[x] == occurrences[y]
                                || loops[occurrences[x]].shares_vertex(&loops[occurrences[y]]))
                    })
                    .collect()
            })
            .collect();
        InteractionGraph { occurrences, adjacency }
    }

    pub fn is_connected(&self) -> bool {
        let n = self.occurrences.len();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut stack = vec![0];
        while let Some(x) = stack.pop() {
            for (y, &adj) in self.adjacency[x].iter().enumerate() {
                if adj && !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// `Σ_{C ⊆ G connected spanning} (−1)^{|E(C)|}` by subset recursion:
    /// grouping all edge subsets by the component of the lowest vertex gives
    /// `f(S) = Σ_{T ∋ min S} c(T)·f(S∖T)` with `f(X) = [G[X] has no edge]`.
    pub fn connected_signed_count(&self) -> Result<i64> {
        let n = self.occurrences.len();
        if n > MAX_URSELL_OCCURRENCES {
            return Err(Error::UrsellTooLarge(n));
        }
        let full = (1usize << n) - 1;
        let nbr_mask: Vec<usize> =
            (0..n).map(|x| (0..n).filter(|&y| self.adjacency[x][y]).fold(0, |m, y| m | (1 << y))).collect();
        let edgeless = |s: usize| (0..n).all(|x| s & (1 << x) == 0 || nbr_mask[x] & s == 0);
        let mut conn = vec![0i64; full + 1];
        for s in 1..=full {
            let low = s & s.wrapping_neg();
            let mut total = if edgeless(s) { 1 } else { 0 };
            // Proper subsets T of s containing the lowest vertex.
            let rest = s ^ low;
            let mut sub = rest;
            loop {
                let t = sub | low;
                if t != s {
                    let comp = s ^ t;
                    if edgeless(comp) {
                        total -= conn[t];
                    }
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & rest;
            }
            conn[s] = total;
        }
        Ok(conn[full])
    }
}

/// `φ(W) = (1/W!)·Σ_{C connected spanning} (−1)^{|E(C)|}`, exactly.
pub fn ursell(w: &Cluster, loops: &[Loop]) -> Result<Ratio<i64>> {
    let g = InteractionGraph::build(w, loops);
    Ok(Ratio::new(g.connected_signed_count()?, w.factorial()))
}

pub fn ratio_to_f64(r: &Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// All multisets of loops with total weight `≤ m` and a connected
/// interaction graph, ordered by `(weight, items)`.
pub fn enumerate_clusters(loops: &[Loop], m: usize) -> Vec<Cluster> {
    let n = loops.len();
    let adj: Vec<Vec<usize>> =
        (0..n).map(|i| (0..n).filter(|&j| j == i || loops[i].shares_vertex(&loops[j])).collect()).collect();
    let mut seen: BTreeSet<Vec<(usize, usize)>> = BTreeSet::new();
    let mut frontier: Vec<(BTreeMap<usize, usize>, usize)> = Vec::new();
    for (i, l) in loops.iter().enumerate() {
        if l.weight() <= m {
            let counts = BTreeMap::from([(i, 1)]);
            seen.insert(vec![(i, 1)]);
            frontier.push((counts, l.weight()));
        }
    }
    // Every connected multiset arises by adding loops one at a time while
    // staying connected (peel leaves of a spanning tree in reverse).
    while let Some((counts, weight)) = frontier.pop() {
        let mut candidates = BTreeSet::new();
        for &i in counts.keys() {
            candidates.extend(adj[i].iter().copied());
        }
        for j in candidates {
            let w2 = weight + loops[j].weight();
            if w2 > m {
                continue;
            }
            let mut next = counts.clone();
            *next.entry(j).or_insert(0) += 1;
            let key: Vec<(usize, usize)> = next.iter().map(|(&a, &b)| (a, b)).collect();
            if seen.insert(key) {
                frontier.push((next, w2));
            }
        }
    }
    let mut out: Vec<Cluster> = seen.into_iter().map(|items| Cluster { items }).collect();
    out.sort_by(|x, y| x.weight(loops).cmp(&y.weight(loops)).then_with(|| x.cmp(y)));
    out
}

/// `Π_i Z_{ℓ_i}^{α_i}`.
pub fn cluster_value(w: &Cluster, values: &[C64]) -> C64 {
    let mut z = c(1.0, 0.0);
    for &(i, a) in &w.items {
        for _ in 0..a {
            z *= values[i];
        }
    }
    add_muls(w.occurrences() as u64);
    z
}

/// `|A|·e^{−(c−c₀)(m+1)}` with unit prefactor.
pub fn tail_bound(region_size: usize, m: usize, c_rate: f64, max_degree: usize) -> Result<f64> {
    let c0 = compute_thresholds(2, max_degree, 0.0).c0;
    if !(c_rate > c0) {
        return Err(Error::NoCertificate { c: c_rate, c0 });
    }
    Ok(region_size as f64 * (-(c_rate - c0) * (m as f64 + 1.0)).exp())
}

/// Loops used to estimate the decay rate: those up to `m`, or, when there are
/// none, the lightest ones above the cutoff (a truncation that admits no
/// loop still needs a rate for its tail).
pub fn rate_sample(g: &Graph, m: usize, enumerate: impl Fn(usize) -> Vec<Loop>) -> Vec<Loop> {
    let mut cut = m;
    loop {
        let ls = enumerate(cut);
        if !ls.is_empty() || cut >= g.edge_count() {
            return ls;
        }
        cut += 1;
    }
}

/// `min_ℓ −log|Z_ℓ|/|ℓ|` over loops with nonzero activity (`+∞` if none).
pub fn achieved_rate(loops: &[Loop], magnitudes: &[f64]) -> f64 {
    loops
        .iter()
        .zip(magnitudes)
        .filter(|(_, &z)| z > 0.0)
        .map(|(l, &z)| -z.ln() / l.weight() as f64)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterItem {
    pub edges: Vec<(usize, usize)>,
    pub multiplicity: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterTerm {
    pub cluster: Vec<ClusterItem>,
    pub weight: usize,
    pub phi: String,
    pub z_w: [f64; 2],
    pub term: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub edges: Vec<(usize, usize)>,
    pub weight: usize,
    pub value: [f64; 2],
    /// `η^{2m/Δ}`.
    pub bound: f64,
}

/// Truncated free-energy expansion with its certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub schema: String,
    pub log_z_bp: f64,
    pub order: usize,
    pub terms: Vec<ClusterTerm>,
    pub f_m: f64,
    pub f_m_imag: f64,
    /// `N·e^{−(c−c₀)(m+1)}` when `c > c₀`.
    pub tail_bound: Option<f64>,
    pub certified: bool,
    pub achieved_c: f64,
    pub c0: f64,
    pub loops: Vec<LoopReport>,
}

impl ExpansionReport {
    /// `log Z_BP + Σ φ·Z_W` recomputed from the stored terms.
    pub fn resum(&self) -> f64 {
        self.log_z_bp + self.terms.iter().map(|t| t.term[0]).sum::<f64>()
    }
}

fn cluster_items(w: &Cluster, loops: &[Loop], g: &Graph) -> Vec<ClusterItem> {
    w.items.iter().map(|&(i, a)| ClusterItem { edges: loops[i].edge_pairs(g), multiplicity: a }).collect()
}

/// Evaluate loop activities in parallel, recording multiplications on the
/// calling thread.
pub fn evaluate_activities(ctx: &LoopContext<'_>, loops: &[Loop]) -> Result<Vec<C64>> {
    let results: Vec<(Result<C64>, u64)> = loops.par_iter().map(|l| counted(|| ctx.activity(l))).collect();
    let mut out = Vec::with_capacity(loops.len());
    for (r, n) in results {
        add_muls(n);
        out.push(r?);
    }
    Ok(out)
}

/// `F_m = log Z_BP + Σ_{|W| ≤ m} φ(W)·Z_W`.
pub fn free_energy(p: &PepsNetwork, mu: &MessageSet, norm: &BpNormalization, m: usize) -> Result<ExpansionReport> {
    let g = p.graph();
    let ctx = LoopContext::new(p, mu, norm);
    let loops = g.enumerate_loops(m);
    let values = evaluate_activities(&ctx, &loops)?;
    let clusters = enumerate_clusters(&loops, m);
    let eps = crate::peps::measure_injectivity(p)?.epsilon;
    let th = compute_thresholds(p.bond_dim(), g.max_degree(), eps);
    let mut terms = Vec::with_capacity(clusters.len());
    let mut sum = c(0.0, 0.0);
    for w in &clusters {
        let phi = ursell(w, &loops)?;
        let z_w = cluster_value(w, &values);
        let term = z_w * ratio_to_f64(&phi);
        sum += term;
        terms.push(ClusterTerm {
            cluster: cluster_items(w, &loops, g),
            weight: w.weight(&loops),
            phi: format!("{}/{}", phi.numer(), phi.denom()),
            z_w: [z_w.re, z_w.im],
            term: [term.re, term.im],
        });
    }
    let achieved_c = if loops.is_empty() {
        let sample = rate_sample(g, m, |k| g.enumerate_loops(k));
        let mags: Vec<f64> = evaluate_activities(&ctx, &sample)?.iter().map(|z| z.norm()).collect();
        achieved_rate(&sample, &mags)
    } else {
        achieved_rate(&loops, &values.iter().map(|z| z.norm()).collect::<Vec<_>>())
    };
    let tail = tail_bound(g.vertex_count(), m, achieved_c, g.max_degree()).ok();
    let loop_reports = loops
        .iter()
        .zip(&values)
        .map(|(l, z)| LoopReport {
            edges: l.edge_pairs(g),
            weight: l.weight(),
            value: [z.re, z.im],
            bound: th.eta.powf(2.0 * l.weight() as f64 / g.max_degree() as f64),
        })
        .collect();
    // Sum the stored real parts in canonical order so the report resums exactly.
    let f_m = norm.log_z_bp + terms.iter().map(|t| t.term[0]).sum::<f64>();
    Ok(ExpansionReport {
        schema: SCHEMA.into(),
        log_z_bp: norm.log_z_bp,
        order: m,
        terms,
        f_m,
        f_m_imag: sum.im,
        certified: tail.is_some(),
        tail_bound: tail,
        achieved_c,
        c0: th.c0,
        loops: loop_reports,
    })
}

// ---- observables --------------------------------------------------------

/// Product operator `⊗_{v∈A} O_v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalOperator {
    pub sites: Vec<(usize, Matrix)>,
}

impl LocalOperator {
    pub fn single(v: usize, op: Matrix) -> Self {
        LocalOperator { sites: vec![(v, op)] }
    }

    pub fn region(&self) -> Vec<usize> {
        self.sites.iter().map(|(v, _)| *v).collect()
    }

    fn single_site(&self) -> Result<(usize, &Matrix)> {
        match self.sites.as_slice() {
            [(v, op)] => Ok((*v, op)),
            _ => Err(Error::Invalid("derivative-form estimators take single-site operators".into())),
        }
    }

    fn validate(&self, p: &PepsNetwork) -> Result<()> {
        let mut seen = BTreeSet::new();
        if self.sites.is_empty() {
            return Err(Error::Invalid("operator has no sites".into()));
        }
        for (v, op) in &self.sites {
            if *v >= p.graph().vertex_count() || !seen.insert(*v) {
                return Err(Error::Invalid(format!("invalid or repeated operator site {v}")));
            }
            if op.rows() != p.phys_dim() || op.cols() != p.phys_dim() {
                return Err(Error::DimensionMismatch(format!("operator at {v} is {}x{}", op.rows(), op.cols())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableEstimate {
    pub schema: String,
    pub method: String,
    pub value: C64,
    pub bp_value: C64,
    pub order: usize,
    pub clusters: usize,
    /// Error certificate (relative for the multiplicative form, additive
    /// otherwise); `None` when the achieved rate does not beat `c₀`.
    pub certificate: Option<f64>,
    pub certified: bool,
    pub achieved_c: f64,
    pub c0: f64,
    pub skipped_clusters: usize,
    pub note: Option<String>,
}

fn max_degree_c0(p: &PepsNetwork) -> f64 {
    compute_thresholds(p.bond_dim(), p.graph().max_degree(), 0.0).c0
}

/// `⟨O_A⟩_BP · exp(Σ_W φ_W (Z^A_W − Z_W))` over clusters from `ℒ_A`
/// meeting `A`.
pub fn expectation_multiplicative(
    p: &PepsNetwork,
    mu: &MessageSet,
    norm: &BpNormalization,
    op: &LocalOperator,
    m: usize,
) -> Result<ObservableEstimate> {
    op.validate(p)?;
    let g = p.graph();
    let ctx = LoopContext::new(p, mu, norm);
    let region = op.region();
    let mut bp_value = c(1.0, 0.0);
    let mut dressed_z = BTreeMap::new();
    for (v, o) in &op.sites {
        let r = ctx.bp_ratio(*v, o)?;
        bp_value *= r;
        dressed_z.insert(*v, (r, o));
    }
    if bp_value.norm() < BP_EXPECTATION_GUARD {
        return Err(Error::BpGuard(format!(
            "|<O>_BP| = {:e} below {BP_EXPECTATION_GUARD:e}; use the additive estimator",
            bp_value.norm()
        )));
    }
    let anchored_loops = |k: usize| -> Vec<Loop> {
        g.enumerate_anchored_loops(std::slice::from_ref(&region), k).into_iter().map(|a| a.lp).collect()
    };
    let evaluate = |ls: &[Loop]| -> Result<(Vec<C64>, Vec<C64>)> {
        let evaluated: Vec<(Result<(C64, C64)>, u64)> = ls
            .par_iter()
            .map(|l| {
                counted(|| {
                    let plain = ctx.activity(l)?;
                    let dressed = if region.iter().any(|&v| l.contains_vertex(v)) {
                        ctx.contract_loop(l, &l.vertices, &|v| match dressed_z.get(&v) {
                            None => Ok((ctx.doubled_tensor(v, None)?, norm.z_v[v])),
                            Some((r, o)) => Ok((ctx.doubled_tensor(v, Some(o))?.scale(c(1.0, 0.0) / *r), norm.z_v[v])),
                        })?
                    } else {
                        plain
                    };
                    Ok((plain, dressed))
                })
            })
            .collect();
        let mut plain = Vec::with_capacity(ls.len());
        let mut dressed = Vec::with_capacity(ls.len());
        for (r, n) in evaluated {
            add_muls(n);
            let (a, b) = r?;
            plain.push(a);
            dressed.push(b);
        }
        Ok((plain, dressed))
    };
    let rate_of = |ls: &[Loop], plain: &[C64], dressed: &[C64]| {
        let mags: Vec<f64> = plain.iter().zip(dressed).map(|(a, b)| a.norm().max(b.norm())).collect();
        achieved_rate(ls, &mags)
    };
    let loops = anchored_loops(m);
    let (plain, dressed) = evaluate(&loops)?;
    let achieved_c = if loops.is_empty() {
        let sample = rate_sample(g, m, anchored_loops);
        let (sp, sd) = evaluate(&sample)?;
        rate_of(&sample, &sp, &sd)
    } else {
        rate_of(&loops, &plain, &dressed)
    };
    let clusters: Vec<Cluster> =
        enumerate_clusters(&loops, m).into_iter().filter(|w| region.iter().any(|&v| w.touches(&loops, v))).collect();
    let mut exponent = c(0.0, 0.0);
    for w in &clusters {
        let phi = ratio_to_f64(&ursell(w, &loops)?);
        exponent += (cluster_value(w, &dressed) - cluster_value(w, &plain)) * phi;
    }
    let certificate = tail_bound(region.len(), m, achieved_c, g.max_degree()).ok();
    Ok(ObservableEstimate {
        schema: SCHEMA.into(),
        method: "multiplicative".into(),
        value: bp_value * exponent.exp(),
        bp_value,
        order: m,
        clusters: clusters.len(),
        certified: certificate.is_some(),
        certificate,
        achieved_c,
        c0: max_degree_c0(p),
        skipped_clusters: 0,
        note: None,
    })
}

/// Truncated bivariate jet `z + λ_A a + λ_B b + λ_Aλ_B ab` (squares dropped).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jet {
    pub z: C64,
    pub a: C64,
    pub b: C64,
    pub ab: C64,
}

impl Jet {
    pub fn constant(z: C64) -> Self {
        let zero = c(0.0, 0.0);
        Jet { z, a: zero, b: zero, ab: zero }
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        add_muls(9);
        Jet {
            z: self.z * o.z,
            a: self.z * o.a + self.a * o.z,
            b: self.z * o.b + self.b * o.z,
            ab: self.z * o.ab + self.a * o.b + self.b * o.a + self.ab * o.z,
        }
    }

    pub fn magnitude(&self) -> f64 {
        self.z.norm().max(self.a.norm()).max(self.b.norm()).max(self.ab.norm())
    }
}

/// Loop jets and clusters for derivative-form estimators with single-site
/// insertions `O_A` at `a` and optionally `O_B` at `b`.
#[derive(Clone, Debug)]
pub struct DerivativeExpansion {
    pub site_a: usize,
    pub site_b: Option<usize>,
    pub loops: Vec<Loop>,
    pub clusters: Vec<Cluster>,
    pub phi: Vec<Ratio<i64>>,
    pub jets: Vec<Jet>,
    /// `⟨O_A⟩_BP`, `⟨O_B⟩_BP`.
    pub r_a: C64,
    pub r_b: C64,
    pub order: usize,
    pub achieved_c: f64,
}

/// Jet of `Z_{ℓ,λ}` for one loop: dressed numerators over the undressed
/// `Π Z^(w)`, divided by the `λ`-dependent vertex normalizations.
pub fn loop_jet(
    ctx: &LoopContext<'_>,
    l: &Loop,
    a: (usize, &Matrix, C64),
    b: Option<(usize, &Matrix, C64)>,
) -> Result<Jet> {
    let zero = c(0.0, 0.0);
    let has_a = l.contains_vertex(a.0);
    let has_b = b.is_some_and(|b| l.contains_vertex(b.0));
    let numer = |ins: &[(usize, &Matrix)]| -> Result<C64> {
        let map: BTreeMap<usize, &Matrix> = ins.iter().copied().collect();
        ctx.dressed_numerator(l, &map)
    };
    let z = numer(&[])?;
    let za = if has_a { numer(&[(a.0, a.1)])? } else { zero };
    let (zb, zab) = match b {
        Some(b) if has_b => (numer(&[(b.0, b.1)])?, if has_a { numer(&[(a.0, a.1), (b.0, b.1)])? } else { zero }),
        _ => (zero, zero),
    };
    let mut jet = Jet { z, a: za, b: zb, ab: zab };
    if has_a {
        jet = jet.mul(&Jet { a: -a.2, ..Jet::constant(c(1.0, 0.0)) });
    }
    if let Some(b) = b.filter(|_| has_b) {
        jet = jet.mul(&Jet { b: -b.2, ..Jet::constant(c(1.0, 0.0)) });
    }
    Ok(jet)
}

/// Evaluate jets for `loops` in parallel.
pub fn evaluate_jets(
    ctx: &LoopContext<'_>,
    loops: &[Loop],
    a: (usize, &Matrix, C64),
    b: Option<(usize, &Matrix, C64)>,
) -> Result<Vec<Jet>> {
    let results: Vec<(Result<Jet>, u64)> = loops.par_iter().map(|l| counted(|| loop_jet(ctx, l, a, b))).collect();
    let mut out = Vec::with_capacity(loops.len());
    for (r, n) in results {
        add_muls(n);
        out.push(r?);
    }
    Ok(out)
}

impl DerivativeExpansion {
    pub fn build(ctx: &LoopContext<'_>, a: (usize, &Matrix), b: Option<(usize, &Matrix)>, m: usize) -> Result<Self> {
        let g = ctx.graph();
        let r_a = ctx.bp_ratio(a.0, a.1)?;
        let r_b = match b {
            Some((v, o)) => ctx.bp_ratio(v, o)?,
            None => c(0.0, 0.0),
        };
        let mut anchors = vec![vec![a.0]];
        if let Some((v, _)) = b {
            anchors.push(vec![v]);
        }
        let loops: Vec<Loop> =
            g.enumerate_anchored_loops(&anchors, m).into_iter().map(|al: AnchoredLoop| al.lp).collect();
        let clusters: Vec<Cluster> = enumerate_clusters(&loops, m)
            .into_iter()
            .filter(|w| w.touches(&loops, a.0) && b.is_none_or(|(v, _)| w.touches(&loops, v)))
            .collect();
        let phi = clusters.iter().map(|w| ursell(w, &loops)).collect::<Result<Vec<_>>>()?;
        let ins_a = (a.0, a.1, r_a);
        let ins_b = b.map(|(v, o)| (v, o, r_b));
        let jets = evaluate_jets(ctx, &loops, ins_a, ins_b)?;
        let achieved_c = if loops.is_empty() {
            let sample =
                rate_sample(g, m, |k| g.enumerate_anchored_loops(&anchors, k).into_iter().map(|al| al.lp).collect());
            jet_rate(&sample, &evaluate_jets(ctx, &sample, ins_a, ins_b)?)
        } else {
            jet_rate(&loops, &jets)
        };
        Ok(DerivativeExpansion {
            site_a: a.0,
            site_b: b.map(|x| x.0),
            loops,
            clusters,
            phi,
            jets,
            r_a,
            r_b,
            order: m,
            achieved_c,
        })
    }

    /// `φ_W · Z_{W,λ}` as a jet.
    pub fn cluster_term(&self, i: usize, jets: &[Jet]) -> Jet {
        let mut acc = Jet::constant(c(1.0, 0.0));
        for &(l, k) in &self.clusters[i].items {
            for _ in 0..k {
                acc = acc.mul(&jets[l]);
            }
        }
        let phi = ratio_to_f64(&self.phi[i]);
        Jet { z: acc.z * phi, a: acc.a * phi, b: acc.b * phi, ab: acc.ab * phi }
    }

    /// Sum of cluster terms in canonical order.
    pub fn total(&self, jets: &[Jet]) -> Jet {
        let mut sum = Jet::constant(c(0.0, 0.0));
        for i in 0..self.clusters.len() {
            let t = self.cluster_term(i, jets);
            sum = Jet { z: sum.z + t.z, a: sum.a + t.a, b: sum.b + t.b, ab: sum.ab + t.ab };
        }
        sum
    }
}

fn jet_rate(loops: &[Loop], jets: &[Jet]) -> f64 {
    let mags: Vec<f64> = jets.iter().map(Jet::magnitude).collect();
    achieved_rate(loops, &mags)
}

/// `⟨O_A⟩_BP + Σ_W φ_W ∂_λ Z_{W,λ}|₀` for a single-site operator.
pub fn expectation_additive(
    p: &PepsNetwork,
    mu: &MessageSet,
    norm: &BpNormalization,
    op: &LocalOperator,
    m: usize,
) -> Result<ObservableEstimate> {
    op.validate(p)?;
    let (a, o) = op.single_site()?;
    let ctx = LoopContext::new(p, mu, norm);
    let exp = DerivativeExpansion::build(&ctx, (a, o), None, m)?;
    Ok(additive_report(p, &exp, &exp.jets))
}

pub fn additive_report(p: &PepsNetwork, exp: &DerivativeExpansion, jets: &[Jet]) -> ObservableEstimate {
    let total = exp.total(jets);
    let achieved_c = exp.achieved_c;
    let certificate =
        tail_bound(1, exp.order, achieved_c, p.graph().max_degree()).ok().map(|t| t * exp.order.max(1) as f64);
    ObservableEstimate {
        schema: SCHEMA.into(),
        method: "additive".into(),
        value: exp.r_a + total.a,
        bp_value: exp.r_a,
        order: exp.order,
        clusters: exp.clusters.len(),
        certified: certificate.is_some(),
        certificate,
        achieved_c,
        c0: max_degree_c0(p),
        skipped_clusters: 0,
        note: None,
    }
}

/// `⟨O_A O_B⟩ − ⟨O_A⟩⟨O_B⟩ ≈ Σ_W φ_W ∂_{λA}∂_{λB} Z_{W,λ}|₀` over clusters
/// from `ℒ_AB` meeting both sites.
pub fn connected_correlator(
    p: &PepsNetwork,
    mu: &MessageSet,
    norm: &BpNormalization,
    op_a: &LocalOperator,
    op_b: &LocalOperator,
    m: usize,
) -> Result<ObservableEstimate> {
    op_a.validate(p)?;
    op_b.validate(p)?;
    let (a, oa) = op_a.single_site()?;
    let (b, ob) = op_b.single_site()?;
    if a == b {
        return Err(Error::Invalid("correlator regions must be disjoint".into()));
    }
    let g = p.graph();
    let c0 = max_degree_c0(p);
    let dist = g.distance(a, b);
    if dist.is_none_or(|d| d > m) {
        return Ok(ObservableEstimate {
            schema: SCHEMA.into(),
            method: "correlator".into(),
            value: c(0.0, 0.0),
            bp_value: c(0.0, 0.0),
            order: m,
            clusters: 0,
            certificate: None,
            certified: false,
            achieved_c: f64::NAN,
            c0,
            skipped_clusters: 0,
            note: Some(format!(
                "d(A,B) = {} exceeds the order {m}: no cluster connects the regions; the clustering bound bounds the correlator by O(e^(-(c-c0) d(A,B)))",
                dist.map_or("inf".to_string(), |d| d.to_string())
            )),
        });
    }
    let ctx = LoopContext::new(p, mu, norm);
    let exp = DerivativeExpansion::build(&ctx, (a, oa), Some((b, ob)), m)?;
    let total = exp.total(&exp.jets);
    let achieved_c = exp.achieved_c;
    let certificate = tail_bound(2, m, achieved_c, g.max_degree()).ok().map(|t| t * m.max(1) as f64);
    Ok(ObservableEstimate {
        schema: SCHEMA.into(),
        method: "correlator".into(),
        value: total.ab,
        bp_value: c(0.0, 0.0),
        order: m,
        clusters: exp.clusters.len(),
        certified: certificate.is_some(),
        certificate,
        achieved_c,
        c0,
        skipped_clusters: 0,
        note: None,
    })
}
