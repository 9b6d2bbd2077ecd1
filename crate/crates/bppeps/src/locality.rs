//! Locality experiments: local perturbations, bit-exact lightcones, decay
//! envelopes, and incremental observable updates that recompute only what a
//! perturbation can reach.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bp::{compute_thresholds, find_fixed_point, iterate_from, q_of, BpContext, ConvergenceLog, MessageSet};
use crate::cluster::{
    additive_report, evaluate_jets, tail_bound, DerivativeExpansion, Jet, ObservableEstimate, SCHEMA,
};
use crate::error::{Error, Result};
use crate::loops::{bp_normalization, bp_normalization_update, BpNormalization, LoopContext};
use crate::peps::{measure_injectivity, perturb_site, InjectivityReport, PepsNetwork};
use crate::tensor::{counted, schatten_norm, svd, Matrix, Schatten, C64};

/// Deltas below this are treated as floating-point floor in fits.
pub const FIT_FLOOR: f64 = 1e-13;
/// Slack constant applied to message-leak terms (see the decay certificates).
pub const DEFAULT_SLACK: f64 = 2.0;
const MAX_ITER: usize = 10_000;

/// Largest perturbation strength on `region` that keeps every perturbed
/// vertex above `δ_th = √(1 − ε*)`: with `‖E‖_∞ = s`, Weyl's inequality and
/// the rescaling by `σ_max ≤ 1 + s` give `δ'_v ≥ (δ_v − s)/(1 + s)`.
pub fn strength_guard(p: &PepsNetwork, report: &InjectivityReport, region: &[usize]) -> f64 {
    let th = compute_thresholds(p.bond_dim(), p.graph().max_degree(), 0.0);
    let delta_th = (1.0 - th.eps_star).sqrt();
    region.iter().map(|&v| (report.delta_v[v] - delta_th) / (1.0 + delta_th)).fold(f64::INFINITY, f64::min)
}

/// Raw (unnormalized) singular values of every site matrix in `region`.
fn raw_spectra(p: &PepsNetwork, region: &[usize]) -> Result<Vec<Vec<f64>>> {
    region.iter().map(|&v| Ok(svd(&p.site_matrix(v))?.s)).collect()
}

/// Perturb `region` after checking the stability guard; returns the new
/// network, its injectivity report, and the largest singular-value shift of
/// `T + E` relative to `T`.
pub fn guarded_perturbation(
    p: &PepsNetwork,
    region: &[usize],
    strength: f64,
    seed: u64,
) -> Result<(PepsNetwork, InjectivityReport, f64)> {
    let before = measure_injectivity(p)?;
    let guard = strength_guard(p, &before, region);
    if strength > 0.0 && !(strength < guard) {
        return Err(Error::StabilityGuard(format!(
            "strength {strength} is not below the guard {guard:.6e} for region {region:?}; use a smaller strength"
        )));
    }
    let perturbed = perturb_site(p, region, strength, seed)?;
    let old = raw_spectra(p, region)?;
    let new = raw_spectra(&perturbed.network, region)?;
    let mut weyl_shift: f64 = 0.0;
    for ((o, n), &(_, top)) in old.iter().zip(&new).zip(&perturbed.rescale) {
        for (a, b) in o.iter().zip(n) {
            weyl_shift = weyl_shift.max((a - b * top).abs());
        }
    }
    let after = measure_injectivity(&perturbed.network)?;
    let th = compute_thresholds(p.bond_dim(), p.graph().max_degree(), after.epsilon);
    if strength > 0.0 && !th.contracting() {
        return Err(Error::StabilityGuard(format!(
            "perturbed epsilon {} is not below eps* = {}",
            after.epsilon, th.eps_star
        )));
    }
    Ok((perturbed.network, after, weyl_shift))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeDelta {
    pub src: usize,
    pub dst: usize,
    /// `d(src, A)`, `None` when unreachable.
    pub r: Option<usize>,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub r: usize,
    pub max_delta: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationTrace {
    pub schema: String,
    pub region: Vec<usize>,
    pub strength: f64,
    pub seed: u64,
    pub tol: f64,
    pub strength_guard: f64,
    pub epsilon_before: f64,
    pub epsilon_after: f64,
    pub eps_star: f64,
    /// `q(ε')`.
    pub q: f64,
    /// `max_i |σ_i(T+E) − σ_i(T)|` over the region, against `‖E‖_∞`.
    pub weyl_max_shift: f64,
    pub weyl_ok: bool,
    pub edge_deltas: Vec<EdgeDelta>,
    /// Per iteration `t` of the new map started at the old fixed point:
    /// edges with `d(src, A) > t` whose bits differ from the old trajectory.
    pub lightcone_violations: Vec<usize>,
    pub rows: Vec<DistanceRow>,
    /// `C` in `δ(r) ≤ C·q^{r−1}`: `‖F'(μ*) − μ*‖/(1 − q)`.
    pub envelope_constant: f64,
    /// Floating-point allowance `2·tol/(1 − q)` from converging both fixed points.
    pub noise_floor: f64,
    pub envelope_ok: bool,
    pub inv_xi_fit: Option<f64>,
    pub inv_xi_star: Option<f64>,
    pub new_fixed_point: ConvergenceLog,
}

impl PerturbationTrace {
    pub fn total_violations(&self) -> usize {
        self.lightcone_violations.iter().sum()
    }

    /// CSV with columns `r,max_delta,bound`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Invalid(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Least-squares slope of `ln y` against `x`, negated; points with
/// `y < FIT_FLOOR` are dropped. `None` with fewer than two distinct `x`.
pub fn fit_decay_rate(points: &[(usize, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(_, y)| *y >= FIT_FLOOR).map(|&(x, y)| (x as f64, y.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(-sxy / sxx)
}

/// Max of `value` per distance, as `(r, max)` sorted by `r`.
fn max_by_distance(items: impl Iterator<Item = (Option<usize>, f64)>) -> Vec<(usize, f64)> {
    let mut out: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for (r, x) in items {
        if let Some(r) = r {
            let e = out.entry(r).or_insert(0.0);
            *e = e.max(x);
        }
    }
    out.into_iter().collect()
}

/// Perturb `A`, re-converge from the old fixed point, record the lightcone,
/// per-distance deltas, the decay envelope, and the fitted rate.
pub fn run_perturbation_experiment(
    p: &PepsNetwork,
    region: &[usize],
    strength: f64,
    seed: u64,
    tol: f64,
) -> Result<PerturbationTrace> {
    let g = p.graph();
    let (mu_old, log_old) = find_fixed_point(p, tol, MAX_ITER)?;
    if !log_old.converged {
        return Err(Error::NoConvergence { routine: "belief propagation", sweeps: log_old.iterations });
    }
    let before = measure_injectivity(p)?;
    let guard = strength_guard(p, &before, region);
    let (p_new, after, weyl_shift) = guarded_perturbation(p, region, strength, seed)?;
    let th = compute_thresholds(p.bond_dim(), g.max_degree(), after.epsilon);
    let q = th.q;
    let dist = g.distances_from(region);

    // Lightcone: new-map trajectory vs old-map trajectory, both from μ*.
    let steps = dist.iter().flatten().copied().max().unwrap_or(0) + 1;
    let ctx_old = BpContext::new(p);
    let ctx_new = BpContext::new(&p_new);
    let mut old_t = mu_old.clone();
    let mut new_t = mu_old.clone();
    let mut violations = vec![0usize];
    let mut first_step = 0.0;
    for t in 1..=steps {
        old_t = ctx_old.apply(&old_t, None)?.0;
        new_t = ctx_new.apply(&new_t, None)?.0;
        if t == 1 {
            first_step = new_t.distance(&mu_old);
        }
        let count = g
            .directed_edges()
            .iter()
            .enumerate()
            .filter(|(e, (v, _))| dist[*v].is_none_or(|d| d > t) && !bitwise_equal(old_t.get(*e), new_t.get(*e)))
            .count();
        violations.push(count);
    }

    let (mu_new, log_new) = if &p_new == p {
        (mu_old.clone(), ConvergenceLog { converged: true, ..Default::default() })
    } else {
        iterate_from(&ctx_new, mu_old.clone(), tol, MAX_ITER, None)?
    };
    if !log_new.converged {
        return Err(Error::NoConvergence { routine: "belief propagation (perturbed)", sweeps: log_new.iterations });
    }
    let edge_deltas: Vec<EdgeDelta> = g
        .directed_edges()
        .iter()
        .enumerate()
        .map(|(e, &(src, dst))| EdgeDelta {
            src,
            dst,
            r: dist[src],
            delta: schatten_norm(&mu_new.get(e).sub(mu_old.get(e)), Schatten::One),
        })
        .collect();
    let envelope_constant = if q < 1.0 { first_step / (1.0 - q) } else { f64::INFINITY };
    let noise_floor = if q < 1.0 { 2.0 * tol / (1.0 - q) } else { f64::INFINITY };
    let per_r = max_by_distance(edge_deltas.iter().map(|d| (d.r, d.delta)));
    let rows: Vec<DistanceRow> = per_r
        .iter()
        .map(|&(r, max_delta)| {
            let bound = if envelope_constant == 0.0 { 0.0 } else { envelope_constant * q.powi(r as i32 - 1) };
            DistanceRow { r, max_delta, bound }
        })
        .collect();
    let envelope_ok = rows.iter().all(|row| row.max_delta <= row.bound + noise_floor);
    Ok(PerturbationTrace {
        schema: SCHEMA.into(),
        region: region.to_vec(),
        strength,
        seed,
        tol,
        strength_guard: guard,
        epsilon_before: before.epsilon,
        epsilon_after: after.epsilon,
        eps_star: th.eps_star,
        q,
        weyl_ok: weyl_shift <= strength + 1e-10,
        weyl_max_shift: weyl_shift,
        edge_deltas,
        lightcone_violations: violations,
        inv_xi_fit: fit_decay_rate(&per_r),
        inv_xi_star: th.inv_xi_star,
        rows,
        envelope_constant,
        noise_floor,
        envelope_ok,
        new_fixed_point: log_new,
    })
}

fn bitwise_equal(a: &Matrix, b: &Matrix) -> bool {
    a.rows() == b.rows()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits())
}

// ---- incremental updates ------------------------------------------------

/// Cached full computation of `⟨O_B⟩` (additive estimator) on one network.
#[derive(Clone, Debug)]
pub struct BaseRun {
    pub network: PepsNetwork,
    pub messages: MessageSet,
    pub norm: BpNormalization,
    pub injectivity: InjectivityReport,
    pub site_b: usize,
    pub op_b: Matrix,
    pub order: usize,
    pub tol: f64,
    pub expansion: DerivativeExpansion,
    /// `φ_W·Z_{W,λ}` jets per cluster, in the expansion's order.
    pub terms: Vec<Jet>,
    pub estimate: ObservableEstimate,
    pub multiplies: u64,
}

/// Full computation: BP from uniform messages, normalization, loops,
/// clusters, and the additive estimate at `site_b`.
pub fn from_scratch(p: &PepsNetwork, site_b: usize, op_b: &Matrix, m: usize, tol: f64) -> Result<BaseRun> {
    let (run, muls) = counted(|| -> Result<BaseRun> {
        let (mu, log) = find_fixed_point(p, tol, MAX_ITER)?;
        if !log.converged {
            return Err(Error::NoConvergence { routine: "belief propagation", sweeps: log.iterations });
        }
        let norm = bp_normalization(p, &mu)?;
        let injectivity = measure_injectivity(p)?;
        let ctx = LoopContext::new(p, &mu, &norm);
        let expansion = DerivativeExpansion::build(&ctx, (site_b, op_b), None, m)?;
        let terms = (0..expansion.clusters.len()).map(|i| expansion.cluster_term(i, &expansion.jets)).collect();
        let estimate = additive_report(p, &expansion, &expansion.jets);
        Ok(BaseRun {
            network: p.clone(),
            messages: mu.clone(),
            norm: norm.clone(),
            injectivity,
            site_b,
            op_b: op_b.clone(),
            order: m,
            tol,
            expansion,
            terms,
            estimate,
            multiplies: 0,
        })
    });
    let mut run = run?;
    run.multiplies = muls;
    Ok(run)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementalUpdatePlan {
    pub r_th: usize,
    pub diameter: usize,
    /// `ceil(ln(1/tol)/ln(1/q))`.
    pub buffer: usize,
    pub reused_cache: bool,
    pub full_recompute: bool,
    pub active_edges: usize,
    pub total_edges: usize,
    pub iterations: usize,
    pub near_clusters: usize,
    pub far_clusters: usize,
    pub near_loops: usize,
    /// `2·m·|B|·e^{−(c−c₀)(R_th+1)}` when `c > c₀`.
    pub far_formal: Option<f64>,
    /// `2·Σ_far |φ_W ∂Z_W|` from the cached terms.
    pub far_empirical: f64,
    /// `slack·‖O_B‖_∞·Δ·(δ_max·q^{buffer} + tol)`.
    pub message_leak: f64,
    pub certificate: f64,
    pub multiplies: u64,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementalResult {
    pub schema: String,
    pub value: C64,
    pub bp_value: C64,
    pub plan: IncrementalUpdatePlan,
}

fn full_plan(run: &BaseRun, r_th: usize, diameter: usize, warning: Option<String>) -> IncrementalResult {
    let g = run.network.graph();
    IncrementalResult {
        schema: SCHEMA.into(),
        value: run.estimate.value,
        bp_value: run.estimate.bp_value,
        plan: IncrementalUpdatePlan {
            r_th,
            diameter,
            buffer: 0,
            reused_cache: false,
            full_recompute: true,
            active_edges: g.directed_edges().len(),
            total_edges: g.directed_edges().len(),
            iterations: 0,
            near_clusters: run.expansion.clusters.len(),
            far_clusters: 0,
            near_loops: run.expansion.loops.len(),
            far_formal: Some(0.0),
            far_empirical: 0.0,
            message_leak: 0.0,
            certificate: 0.0,
            multiplies: run.multiplies,
            warning,
        },
    }
}

/// Update `⟨O_B⟩` after `p_new` changed the tensors on `region`, reusing
/// `cache`: messages re-converge only within `R_th + buffer` of the region,
/// clusters whose support lies within `R_th` of `B` are re-evaluated, and
/// far-cluster terms are reused. Without a usable cache, or when
/// `R_th ≥ diameter`, this is a full recomputation.
#[allow(clippy::too_many_arguments)]
pub fn incremental_observable_update(
    cache: Option<&BaseRun>,
    p_new: &PepsNetwork,
    region: &[usize],
    site_b: usize,
    op_b: &Matrix,
    r_th: usize,
    m: usize,
    tol: f64,
) -> Result<IncrementalResult> {
    let g = p_new.graph();
    let diameter = g.diameter();
    let base = match cache {
        Some(b) if b.site_b == site_b && &b.op_b == op_b && b.order == m && b.network.graph() == g => b,
        _ => {
            let msg = "no matching cached base run; recomputing from scratch".to_string();
            warn!("{msg}");
            return Ok(full_plan(&from_scratch(p_new, site_b, op_b, m, tol)?, r_th, diameter, Some(msg)));
        }
    };
    if &base.network == p_new {
        let mut out = full_plan(base, r_th, diameter, None);
        out.plan.full_recompute = false;
        out.plan.reused_cache = true;
        out.plan.active_edges = 0;
        out.plan.near_clusters = 0;
        out.plan.near_loops = 0;
        out.plan.far_clusters = base.expansion.clusters.len();
        out.plan.multiplies = 0;
        return Ok(out);
    }
    if r_th >= diameter {
        return Ok(full_plan(&from_scratch(p_new, site_b, op_b, m, tol)?, r_th, diameter, None));
    }
    let (result, muls) = counted(|| incremental_inner(base, p_new, region, r_th, diameter, tol));
    let mut result = result?;
    result.plan.multiplies = muls;
    Ok(result)
}

fn incremental_inner(
    base: &BaseRun,
    p_new: &PepsNetwork,
    region: &[usize],
    r_th: usize,
    diameter: usize,
    tol: f64,
) -> Result<IncrementalResult> {
    let g = p_new.graph();
    let n = g.vertex_count();
    // Injectivity changes only on the region.
    let mut delta = base.injectivity.delta_v.clone();
    for &v in region {
        let s = svd(&p_new.site_matrix(v))?.s;
        delta[v] = if s[0] > 0.0 { (s[s.len() - 1] / s[0]).min(1.0) } else { 0.0 };
    }
    let dmin = delta.iter().copied().fold(1.0, f64::min);
    let q = q_of(g.max_degree(), 1.0 - dmin * dmin);
    if !(q < 1.0) {
        let msg = format!("q = {q} is not contracting; recomputing from scratch");
        warn!("{msg}");
        return Ok(full_plan(
            &from_scratch(p_new, base.site_b, &base.op_b, base.order, tol)?,
            r_th,
            diameter,
            Some(msg),
        ));
    }
    let buffer = if q <= 0.0 { 0 } else { ((1.0 / tol).ln() / (1.0 / q).ln()).ceil().max(0.0) as usize };
    let dist_a = g.distances_from(region);
    let reach = r_th + buffer;
    let active: Vec<bool> = g.directed_edges().iter().map(|&(v, _)| dist_a[v].is_some_and(|d| d <= reach)).collect();
    let ctx = BpContext::restricted(p_new, &active);
    let (mu, log) = iterate_from(&ctx, base.messages.clone(), tol, MAX_ITER, Some(&active))?;
    if !log.converged {
        return Err(Error::NoConvergence { routine: "local belief propagation", sweeps: log.iterations });
    }
    let mut changed_vertices = vec![false; n];
    for &v in region {
        changed_vertices[v] = true;
    }
    let norm = bp_normalization_update(p_new, &mu, &base.norm, &active, &changed_vertices)?;

    let exp = &base.expansion;
    let dist_b = g.distances_from(&[base.site_b]);
    let near: Vec<bool> = exp
        .clusters
        .iter()
        .map(|w| w.support(&exp.loops).iter().all(|&v| dist_b[v].is_some_and(|d| d <= r_th)))
        .collect();
    let mut near_loop = vec![false; exp.loops.len()];
    for (w, _) in exp.clusters.iter().zip(&near).filter(|(_, &nr)| nr) {
        for &(l, _) in &w.items {
            near_loop[l] = true;
        }
    }
    let mut needed = vec![false; n];
    for (l, _) in exp.loops.iter().zip(&near_loop).filter(|(_, &nl)| nl) {
        for &v in &l.vertices {
            needed[v] = true;
        }
    }
    let lctx = LoopContext::partial(p_new, &mu, &norm, &needed);
    let r_a = lctx.bp_ratio(base.site_b, &base.op_b)?;
    let near_idx: Vec<usize> = (0..exp.loops.len()).filter(|&l| near_loop[l]).collect();
    let subset: Vec<_> = near_idx.iter().map(|&l| exp.loops[l].clone()).collect();
    let fresh = evaluate_jets(&lctx, &subset, (base.site_b, &base.op_b, r_a), None)?;
    let mut jets = exp.jets.clone();
    for (&l, j) in near_idx.iter().zip(fresh) {
        jets[l] = j;
    }
    let mut correction = C64::new(0.0, 0.0);
    let mut far_empirical = 0.0;
    for (i, &is_near) in near.iter().enumerate() {
        if is_near {
            correction += exp.cluster_term(i, &jets).a;
        } else {
            correction += base.terms[i].a;
            far_empirical += 2.0 * base.terms[i].a.norm();
        }
    }
    let far_formal = tail_bound(1, r_th, exp.achieved_c, g.max_degree()).ok().map(|t| 2.0 * base.order as f64 * t);
    let delta_max = mu
        .messages()
        .iter()
        .zip(base.messages.messages())
        .map(|(a, b)| schatten_norm(&a.sub(b), Schatten::One))
        .fold(0.0, f64::max);
    let op_norm = schatten_norm(&base.op_b, Schatten::Inf);
    let message_leak = DEFAULT_SLACK * op_norm * g.max_degree() as f64 * (delta_max * q.powi(buffer as i32) + tol);
    let certificate = far_formal.unwrap_or(far_empirical) + message_leak;
    let near_clusters = near.iter().filter(|&&x| x).count();
    Ok(IncrementalResult {
        schema: SCHEMA.into(),
        value: r_a + correction,
        bp_value: r_a,
        plan: IncrementalUpdatePlan {
            r_th,
            diameter,
            buffer,
            reused_cache: false,
            full_recompute: false,
            active_edges: active.iter().filter(|&&x| x).count(),
            total_edges: active.len(),
            iterations: log.iterations,
            near_clusters,
            far_clusters: exp.clusters.len() - near_clusters,
            near_loops: near_idx.len(),
            far_formal,
            far_empirical,
            message_leak,
            certificate,
            multiplies: 0,
            warning: None,
        },
    })
}

// ---- observable sweep ---------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strength: f64,
    pub site: usize,
    /// `R = d(a, B)`.
    pub r: usize,
    pub shift: f64,
    pub bp_shift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub strength: f64,
    /// `(R, max shift, max BP shift)`.
    pub by_distance: Vec<(usize, f64, f64)>,
    pub inv_xi_fit: Option<f64>,
    pub inv_xi_fit_bp: Option<f64>,
    /// Max shift per `R` is nonincreasing in `R` (up to `FIT_FLOOR`).
    pub envelope_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: String,
    pub site_b: usize,
    pub order: usize,
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<SweepSummary>,
    pub inv_xi_star: Option<f64>,
    /// `c − c₀` from the base expansion.
    pub cluster_rate: f64,
}

/// Perturb each vertex `a ≠ B` in turn at every strength and record the
/// shift of `⟨O_B⟩` (additive estimate) and of `⟨O_B⟩_BP` against `R = d(a, B)`.
pub fn observable_locality_sweep(
    p: &PepsNetwork,
    strengths: &[f64],
    site_b: usize,
    op_b: &Matrix,
    m: usize,
    seed: u64,
    tol: f64,
) -> Result<SweepReport> {
    let g = p.graph();
    let base = from_scratch(p, site_b, op_b, m, tol)?;
    let dist = g.distances_from(&[site_b]);
    let jobs: Vec<(f64, usize)> = strengths
        .iter()
        .flat_map(|&s| (0..g.vertex_count()).filter(|&a| a != site_b && dist[a].is_some()).map(move |a| (s, a)))
        .collect();
    let rows: Vec<Result<SweepRow>> = jobs
        .par_iter()
        .map(|&(s, a)| {
            let (p_new, _, _) = guarded_perturbation(p, &[a], s, seed)?;
            let run = from_scratch(&p_new, site_b, op_b, m, tol)?;
            Ok(SweepRow {
                strength: s,
                site: a,
                r: dist[a].unwrap(),
                shift: (run.estimate.value - base.estimate.value).norm(),
                bp_shift: (run.estimate.bp_value - base.estimate.bp_value).norm(),
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let summaries = strengths
        .iter()
        .map(|&s| {
            let mine: Vec<&SweepRow> = rows.iter().filter(|r| r.strength == s).collect();
            let shift = max_by_distance(mine.iter().map(|r| (Some(r.r), r.shift)));
            let bp = max_by_distance(mine.iter().map(|r| (Some(r.r), r.bp_shift)));
            let by_distance: Vec<(usize, f64, f64)> = shift.iter().zip(&bp).map(|(a, b)| (a.0, a.1, b.1)).collect();
            let envelope_ok = by_distance.windows(2).all(|w| w[1].1 <= w[0].1 + FIT_FLOOR);
            SweepSummary {
                strength: s,
                inv_xi_fit: fit_decay_rate(&shift),
                inv_xi_fit_bp: fit_decay_rate(&bp),
                by_distance,
                envelope_ok,
            }
        })
        .collect();
    let th = compute_thresholds(p.bond_dim(), g.max_degree(), base.injectivity.epsilon);
    Ok(SweepReport {
        schema: SCHEMA.into(),
        site_b,
        order: m,
        rows,
        summaries,
        inv_xi_star: th.inv_xi_star,
        cluster_rate: base.expansion.achieved_c - th.c0,
    })
}
