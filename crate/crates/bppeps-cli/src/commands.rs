//! Subcommand implementations. Each returns the process exit code on
//! success paths that still need a nonzero status (e.g. a partial report
//! after non-convergence).

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use bppeps::bp::{compute_thresholds, find_fixed_point, Thresholds, RATIO_FLOOR};
use bppeps::cluster::{
    connected_correlator, expectation_additive, expectation_multiplicative, free_energy, LocalOperator,
};
use bppeps::locality::{
    from_scratch, guarded_perturbation, incremental_observable_update, run_perturbation_experiment,
};
use bppeps::loops::bp_normalization;
use bppeps::oracle::{exact_connected_correlator, exact_expectation, exact_norm};
use bppeps::peps::{generate_random_peps, generate_random_peps_with_phys, measure_injectivity, PepsNetwork};
use bppeps::{Error, Result};

use crate::report::{envelope, load_graph, load_network, load_operator, sig6, write_json, write_text};
use crate::{ContractArgs, CorrelateArgs, GenerateArgs, ObserveArgs, PerturbArgs, ScanArgs};

fn thresholds_of(p: &PepsNetwork) -> Result<(f64, Thresholds)> {
    let inj = measure_injectivity(p)?;
    Ok((inj.epsilon, compute_thresholds(p.bond_dim(), p.graph().max_degree(), inj.epsilon)))
}

pub fn generate(a: &GenerateArgs) -> Result<u8> {
    let (graph_bytes, g) = load_graph(&a.graph)?;
    let p = match a.phys_dim {
        Some(d) => generate_random_peps_with_phys(&g, a.bond_dim, d, a.seed, a.epsilon)?,
        None => generate_random_peps(&g, a.bond_dim, a.seed, a.epsilon)?,
    };
    let inj = measure_injectivity(&p)?;
    eprintln!(
        "generated {} vertices, {} edges, D = {}, d = {}: delta = {}, epsilon = {}",
        g.vertex_count(),
        g.edge_count(),
        p.bond_dim(),
        p.phys_dim(),
        sig6(inj.delta),
        sig6(inj.epsilon)
    );
    let result = json!({ "network": p, "injectivity": inj });
    write_json(a.output.as_deref(), &envelope("generate", a, &[graph_bytes], result)?)?;
    Ok(0)
}

/// `|Z_ℓ| ≤ slack·η^{2|ℓ|/Δ}` on every reported loop.
fn decay_violations(fe: &bppeps::cluster::ExpansionReport, slack: f64) -> usize {
    fe.loops.iter().filter(|l| (l.value[0].hypot(l.value[1])) > slack * l.bound).count()
}

pub fn contract(a: &ContractArgs) -> Result<u8> {
    let (bytes, p) = load_network(&a.network)?;
    let (eps, th) = thresholds_of(&p)?;
    let (mu, log) = find_fixed_point(&p, a.bp.tol, a.bp.max_iter)?;
    if !log.converged {
        let result = json!({ "converged": false, "convergence": log, "thresholds": th, "epsilon": eps });
        write_json(a.output.as_deref(), &envelope("contract", a, &[bytes], result)?)?;
        eprintln!("error: belief propagation did not converge within {} iterations", a.bp.max_iter);
        return Ok(3);
    }
    let norm = bp_normalization(&p, &mu)?;
    let fe = free_energy(&p, &mu, &norm, a.order)?;
    let decay_applicable = eps < th.eps_double_star;
    if !th.contracting() {
        warn!(
            "epsilon {} is not below eps* = {}: convergence and bounds are not guaranteed",
            sig6(eps),
            sig6(th.eps_star)
        );
    }
    let mut result = json!({
        "converged": true,
        "guaranteed": th.contracting(),
        "convergence": log,
        "max_ratio": log.max_ratio(RATIO_FLOOR),
        "epsilon": eps,
        "thresholds": th,
        "expansion": fe,
        "decay_check": { "applicable": decay_applicable, "slack": a.slack, "violations": decay_violations(&fe, a.slack) },
    });
    eprintln!("log Z_BP = {}, F_{} = {}, certified = {}", sig6(fe.log_z_bp), a.order, sig6(fe.f_m), fe.certified);
    if a.oracle {
        let z = exact_norm(&p)?;
        let log_z = z.value.re.ln();
        let abs_err = (fe.f_m - log_z).abs();
        result["oracle"] = json!({
            "z": z.value,
            "log_z": log_z,
            "method": z.method,
            "cost": z.cost,
            "abs_error_log": abs_err,
            "relative_error": (fe.f_m - log_z).exp_m1().abs(),
            "within_tail_bound": fe.tail_bound.map(|t| abs_err <= t),
        });
        eprintln!("oracle log Z = {}, |F_m - log Z| = {}", sig6(log_z), sig6(abs_err));
    }
    write_json(a.output.as_deref(), &envelope("contract", a, &[bytes], result)?)?;
    Ok(0)
}

fn converged_fixed_point(
    p: &PepsNetwork,
    tol: f64,
    max_iter: usize,
) -> Result<(bppeps::bp::MessageSet, bppeps::loops::BpNormalization)> {
    let (mu, log) = find_fixed_point(p, tol, max_iter)?;
    if !log.converged {
        return Err(Error::NoConvergence { routine: "belief propagation", sweeps: log.iterations });
    }
    let norm = bp_normalization(p, &mu)?;
    Ok((mu, norm))
}

pub fn observe(a: &ObserveArgs) -> Result<u8> {
    if a.sites.len() != a.operators.len() {
        return Err(Error::Invalid("every --site needs a matching --operator".into()));
    }
    let (bytes, p) = load_network(&a.network)?;
    let mut inputs = vec![bytes];
    let mut sites = Vec::new();
    for (&v, spec) in a.sites.iter().zip(&a.operators) {
        let (b, m) = load_operator(spec, p.phys_dim())?;
        inputs.push(b);
        sites.push((v, m));
    }
    let op = LocalOperator { sites };
    let (mu, norm) = converged_fixed_point(&p, a.bp.tol, a.bp.max_iter)?;
    let multiplicative = match expectation_multiplicative(&p, &mu, &norm, &op, a.order) {
        Ok(est) => json!(est),
        Err(Error::BpGuard(msg)) => json!({ "skipped": true, "note": msg }),
        Err(e) => return Err(e),
    };
    let additive = if op.sites.len() == 1 {
        json!(expectation_additive(&p, &mu, &norm, &op, a.order)?)
    } else {
        json!({ "skipped": true, "note": "the additive estimator takes single-site operators" })
    };
    let mut result = json!({ "multiplicative": multiplicative, "additive": additive });
    if a.oracle {
        let exact = exact_expectation(&p, &op.sites)?;
        let err = |v: &Value| -> Option<f64> {
            let z: bppeps::C64 = serde_json::from_value(v.get("value")?.clone()).ok()?;
            Some((z - exact.value).norm())
        };
        result["oracle"] = json!({
            "value": exact.value,
            "method": exact.method,
            "cost": exact.cost,
            "multiplicative_error": err(&result["multiplicative"]),
            "additive_error": err(&result["additive"]),
        });
    }
    write_json(a.output.as_deref(), &envelope("observe", a, &inputs, result)?)?;
    Ok(0)
}

pub fn correlate(a: &CorrelateArgs) -> Result<u8> {
    let (bytes, p) = load_network(&a.network)?;
    let (ba, oa) = load_operator(&a.op_a, p.phys_dim())?;
    let (bb, ob) = load_operator(&a.op_b, p.phys_dim())?;
    let (mu, norm) = converged_fixed_point(&p, a.bp.tol, a.bp.max_iter)?;
    let op_a = LocalOperator::single(a.site_a, oa);
    let op_b = LocalOperator::single(a.site_b, ob);
    let est = connected_correlator(&p, &mu, &norm, &op_a, &op_b, a.order)?;
    let mut result = json!({ "correlator": est, "distance": p.graph().distance(a.site_a, a.site_b) });
    if a.oracle {
        let exact = exact_connected_correlator(&p, &op_a.sites, &op_b.sites)?;
        result["oracle"] = json!({ "value": exact.value, "method": exact.method, "cost": exact.cost, "error": (est.value - exact.value).norm() });
    }
    write_json(a.output.as_deref(), &envelope("correlate", a, &[bytes, ba, bb], result)?)?;
    Ok(0)
}

pub fn perturb(a: &PerturbArgs) -> Result<u8> {
    let (bytes, p) = load_network(&a.network)?;
    let (bo, op) = load_operator(&a.op_b, p.phys_dim())?;
    let g = p.graph();
    if a.region.contains(&a.site_b) {
        return Err(Error::Invalid("the observable site must lie outside the perturbed region".into()));
    }
    let trace = run_perturbation_experiment(&p, &a.region, a.strength, a.seed, a.tol)?;
    let (p_new, _, _) = guarded_perturbation(&p, &a.region, a.strength, a.seed)?;
    let dist = g
        .region_distance(&a.region, &[a.site_b])?
        .ok_or_else(|| Error::Invalid("region and observable site are disconnected".into()))?;
    let r_th = a.r_th.unwrap_or(dist.div_ceil(2));
    let scratch = from_scratch(&p_new, a.site_b, &op, a.order, a.tol)?;
    let mut result = json!({
        "trace": trace,
        "distance": dist,
        "r_th": r_th,
        "from_scratch": { "value": scratch.estimate.value, "multiplies": scratch.multiplies },
    });
    if !a.from_scratch {
        let base = from_scratch(&p, a.site_b, &op, a.order, a.tol)?;
        let inc = incremental_observable_update(Some(&base), &p_new, &a.region, a.site_b, &op, r_th, a.order, a.tol)?;
        let diff = (inc.value - scratch.estimate.value).norm();
        result["base_value"] = json!(base.estimate.value);
        result["agreement"] = json!({
            "abs_difference": diff,
            "within_certificate": diff <= inc.plan.certificate,
            "savings_ratio": inc.plan.multiplies as f64 / scratch.multiplies as f64,
        });
        result["incremental"] = json!(inc);
        eprintln!(
            "incremental vs from-scratch: |diff| = {}, certificate = {}, multiplies {} vs {}",
            sig6(diff),
            sig6(inc.plan.certificate),
            inc.plan.multiplies,
            scratch.multiplies
        );
    }
    eprintln!("lightcone violations: {}, envelope ok: {}", trace.total_violations(), trace.envelope_ok);
    if let Some(path) = &a.csv {
        write_text(path, &trace.to_csv()?)?;
    }
    write_json(a.output.as_deref(), &envelope("perturb", a, &[bytes, bo], result)?)?;
    Ok(0)
}

#[derive(Serialize)]
struct MemberResult {
    seed: u64,
    epsilon: f64,
    converged: bool,
    iterations: usize,
    max_ratio: Option<f64>,
    achieved_c: Option<f64>,
    max_loop_activity: Option<f64>,
    relative_error: Option<f64>,
    note: Option<String>,
}

#[derive(Serialize)]
struct ScanRow {
    epsilon: f64,
    q: f64,
    eps_star: f64,
    eps_double_star: f64,
    contracting: bool,
    converged: usize,
    ensemble: usize,
    max_ratio: Option<f64>,
    ratio_within_q: Option<bool>,
    mean_iterations: f64,
    min_achieved_c: Option<f64>,
    c0: f64,
    max_loop_activity: Option<f64>,
    decay: String,
    max_relative_error: Option<f64>,
}

fn scan_member(a: &ScanArgs, g: &bppeps::Graph, eps: f64, seed: u64) -> Result<MemberResult> {
    let p = generate_random_peps(g, a.bond_dim, seed, eps)?;
    let measured = measure_injectivity(&p)?.epsilon;
    let mut out = MemberResult {
        seed,
        epsilon: measured,
        converged: false,
        iterations: 0,
        max_ratio: None,
        achieved_c: None,
        max_loop_activity: None,
        relative_error: None,
        note: None,
    };
    let (mu, log) = match find_fixed_point(&p, a.bp.tol, a.bp.max_iter) {
        Ok(x) => x,
        Err(e) => {
            out.note = Some(e.to_string());
            return Ok(out);
        }
    };
    out.iterations = log.iterations;
    out.max_ratio = log.max_ratio(RATIO_FLOOR);
    out.converged = log.converged;
    if !log.converged {
        return Ok(out);
    }
    let fe = bp_normalization(&p, &mu).and_then(|norm| free_energy(&p, &mu, &norm, a.order));
    let fe = match fe {
        Ok(fe) => fe,
        Err(e) => {
            out.note = Some(e.to_string());
            return Ok(out);
        }
    };
    out.achieved_c = Some(fe.achieved_c);
    out.max_loop_activity = Some(fe.loops.iter().map(|l| l.value[0].hypot(l.value[1])).fold(0.0, f64::max));
    if a.oracle {
        match exact_norm(&p) {
            Ok(z) => out.relative_error = Some((fe.f_m - z.value.re.ln()).exp_m1().abs()),
            Err(e) => out.note = Some(e.to_string()),
        }
    }
    Ok(out)
}

/// Loops whose activity never exceeds this are reported as below floor.
const ACTIVITY_FLOOR: f64 = 1e-14;

pub fn scan(a: &ScanArgs) -> Result<u8> {
    let (graph_bytes, g) = load_graph(&a.graph)?;
    if a.ensemble == 0 {
        return Err(Error::Invalid("ensemble size must be positive".into()));
    }
    let jobs: Vec<(f64, u64)> =
        a.epsilons.iter().flat_map(|&e| (0..a.ensemble as u64).map(move |i| (e, a.seed.wrapping_add(i)))).collect();
    let members: Vec<Result<MemberResult>> =
        jobs.par_iter().map(|&(eps, seed)| scan_member(a, &g, eps, seed)).collect();
    let members = members.into_iter().collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (i, &eps) in a.epsilons.iter().enumerate() {
        let mine = &members[i * a.ensemble..(i + 1) * a.ensemble];
        let th = compute_thresholds(a.bond_dim, g.max_degree(), eps);
        let max_opt = |f: &dyn Fn(&MemberResult) -> Option<f64>| {
            mine.iter().filter_map(f).fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |y| y.max(x))))
        };
        let max_ratio = max_opt(&|m| m.max_ratio);
        let max_act = max_opt(&|m| m.max_loop_activity);
        let min_c = mine
            .iter()
            .filter_map(|m| m.achieved_c)
            .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |y| y.min(x))));
        let decay = match (max_act, min_c) {
            (Some(z), _) if z <= ACTIVITY_FLOOR => "all loops below floor".to_string(),
            (_, Some(c)) if c > th.c0 => "c > c0".to_string(),
            (_, Some(_)) => "c <= c0 (unguaranteed)".to_string(),
            _ => "unavailable".to_string(),
        };
        let row = ScanRow {
            epsilon: eps,
            q: th.q,
            eps_star: th.eps_star,
            eps_double_star: th.eps_double_star,
            contracting: th.contracting(),
            converged: mine.iter().filter(|m| m.converged).count(),
            ensemble: a.ensemble,
            ratio_within_q: if th.contracting() { max_ratio.map(|r| r <= th.q + 1e-9) } else { None },
            max_ratio,
            mean_iterations: mine.iter().map(|m| m.iterations as f64).sum::<f64>() / a.ensemble as f64,
            min_achieved_c: min_c,
            c0: th.c0,
            max_loop_activity: max_act,
            decay,
            max_relative_error: max_opt(&|m| m.relative_error),
        };
        info!("epsilon {eps}: {} / {} converged", row.converged, row.ensemble);
        rows.push(row);
    }
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &rows {
            w.serialize(r).map_err(|e| Error::Invalid(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
        write_text(path, &String::from_utf8(bytes).expect("csv output is UTF-8"))?;
    }
    let result = json!({ "rows": rows, "members": members });
    write_json(a.output.as_deref(), &envelope("scan", a, &[graph_bytes], result)?)?;
    Ok(0)
}
