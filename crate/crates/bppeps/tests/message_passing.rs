use std::collections::BTreeMap;

use bppeps::bp::{compute_thresholds, find_fixed_point, geometric_iteration_bound, q_of, RATIO_FLOOR};
use bppeps::graph::Graph;
use bppeps::loops::{bp_normalization, dressed_loop_activity, loop_activity, LoopContext};
use bppeps::peps::{build_superoperator, generate_random_peps, measure_injectivity, random_hermitian};
use bppeps::tensor::{trace_norm_hermitian, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn isometric_graphs() -> Vec<Graph> {
    vec![
        Graph::complete(3).unwrap(),
        Graph::cycle(4).unwrap(),
        Graph::complete(4).unwrap(),
        Graph::grid(2, 3, true).unwrap(),
    ]
}

#[test]
fn generated_injectivity_hits_target() {
    for (seed, eps) in [(1, 0.0), (2, 0.03), (3, 0.1), (4, 0.25)] {
        let g = Graph::grid(2, 3, true).unwrap();
        let p = generate_random_peps(&g, 2, seed, eps).unwrap();
        let rep = measure_injectivity(&p).unwrap();
        assert!((rep.epsilon - eps).abs() < 1e-10, "target {eps}, measured {}", rep.epsilon);
        assert!(!rep.non_injective);
        assert!(rep.singular_values.iter().all(|s| (s[0] - 1.0).abs() < 1e-12));
    }
}

#[test]
fn isometric_channels_are_bistochastic() {
    let g = Graph::complete(4).unwrap();
    let p = generate_random_peps(&g, 2, 9, 0.0).unwrap();
    for v in 0..4 {
        for &n in g.neighbors(v) {
            let phi = build_superoperator(&p, v, n).unwrap();
            let (left, right) = phi.bistochastic_defects();
            assert!(left < 1e-10 && right < 1e-10, "vertex {v} → {n}: {left} {right}");
        }
    }
}

#[test]
fn isometric_fixed_point_is_uniform_after_one_step() {
    for g in isometric_graphs() {
        let p = generate_random_peps(&g, 2, 17, 0.0).unwrap();
        let (mu, log) = find_fixed_point(&p, 1e-12, 100).unwrap();
        assert!(log.converged);
        assert!(log.iterations <= 2, "took {} iterations", log.iterations);
        assert!(log.distances[0] < 1e-12);
        let half = Matrix::identity(2).scale_real(0.5);
        for m in mu.messages() {
            assert!(m.max_abs_diff(&half) < 1e-12);
        }
        let norm = bp_normalization(&p, &mu).unwrap();
        let want = g.edge_count() as f64 * 2f64.ln();
        assert!((norm.log_z_bp - want).abs() < 1e-10);
        let ctx = LoopContext::new(&p, &mu, &norm);
        for l in g.enumerate_loops(g.edge_count()) {
            assert!(ctx.activity(&l).unwrap().norm() <= 1e-12);
        }
    }
}

#[test]
fn contraction_ratio_respects_q() {
    let graphs = [
        Graph::grid(2, 3, true).unwrap(),
        Graph::random_regular(8, 3, 1).unwrap(),
        Graph::grid(3, 3, true).unwrap(),
        Graph::random_regular(8, 4, 2).unwrap(),
    ];
    for g in &graphs {
        for (i, eps) in [0.01, 0.03, 0.05].into_iter().enumerate() {
            let th = compute_thresholds(2, g.max_degree(), eps);
            assert!(th.contracting());
            let p = generate_random_peps(g, 2, 100 + i as u64, eps).unwrap();
            let (_, log) = find_fixed_point(&p, 1e-13, 10_000).unwrap();
            assert!(log.converged);
            if let Some(r) = log.max_ratio(RATIO_FLOOR) {
                assert!(r <= th.q + 1e-9, "Δ={} ε={eps}: ratio {r} > q {}", g.max_degree(), th.q);
            }
            let bound = geometric_iteration_bound(log.distances[0], 1e-13, th.q);
            assert!(log.iterations <= bound, "{} iterations, bound {bound}", log.iterations);
        }
    }
}

#[test]
fn fixed_points_stay_close_to_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let graphs = [Graph::grid(2, 3, true).unwrap(), Graph::complete(4).unwrap(), Graph::grid(3, 3, true).unwrap()];
    for trial in 0..24u64 {
        let g = &graphs[trial as usize % graphs.len()];
        let eps_star = compute_thresholds(2, g.max_degree(), 0.0).eps_star;
        let eps = rng.random_range(0.0..0.9 * eps_star);
        let p = generate_random_peps(g, 2, trial, eps).unwrap();
        let (mu, log) = find_fixed_point(&p, 1e-13, 10_000).unwrap();
        assert!(log.converged);
        let half = Matrix::identity(2).scale_real(0.5);
        let worst = mu.messages().iter().map(|m| trace_norm_hermitian(&m.sub(&half))).fold(0.0, f64::max);
        assert!(worst <= 2.0 * eps / (1.0 - eps) + 1e-9, "seed {trial}, ε={eps}: {worst}");
        assert!(q_of(g.max_degree(), eps) < 1.0);
    }
}

#[test]
fn identity_insertion_leaves_activity_unchanged() {
    let g = Graph::grid(2, 3, true).unwrap();
    let p = generate_random_peps(&g, 2, 5, 0.05).unwrap();
    let (mu, _) = find_fixed_point(&p, 1e-13, 10_000).unwrap();
    let norm = bp_normalization(&p, &mu).unwrap();
    let id = Matrix::identity(p.phys_dim());
    for a in g.enumerate_anchored_loops(&[vec![0]], 4) {
        if a.lp.is_valid(&g, &[]) && a.lp.contains_vertex(0) {
            let plain = loop_activity(&p, &mu, &norm, &a.lp).unwrap().value;
            let dressed = dressed_loop_activity(&p, &mu, &norm, &a, &[(0, id.clone())]).unwrap().value;
            assert_eq!(plain, dressed);
        }
    }
}

#[test]
fn activities_obey_vertex_cut_bound_and_decay_with_epsilon() {
    let g = Graph::grid(2, 3, true).unwrap();
    let mut worst = BTreeMap::new();
    for eps in [0.01, 0.05, 0.1] {
        let p = generate_random_peps(&g, 2, 8, eps).unwrap();
        let (mu, _) = find_fixed_point(&p, 1e-13, 10_000).unwrap();
        let norm = bp_normalization(&p, &mu).unwrap();
        let ctx = LoopContext::new(&p, &mu, &norm);
        let mut w: f64 = 0.0;
        for l in g.enumerate_loops(6) {
            let z = ctx.activity(&l).unwrap().norm();
            assert!(z <= ctx.vertex_cut_bound(&l).unwrap() * (1.0 + 1e-9));
            w = w.max(z);
        }
        worst.insert((eps * 1000.0) as u64, w);
    }
    let v: Vec<f64> = worst.values().copied().collect();
    assert!(v[0] < v[1] && v[1] < v[2], "{v:?}");
}

#[test]
fn dressed_bp_values_of_random_operators_are_finite() {
    let g = Graph::complete(4).unwrap();
    let p = generate_random_peps(&g, 2, 3, 0.05).unwrap();
    let (mu, _) = find_fixed_point(&p, 1e-13, 10_000).unwrap();
    let norm = bp_normalization(&p, &mu).unwrap();
    let ctx = LoopContext::new(&p, &mu, &norm);
    for v in 0..4 {
        let o = random_hermitian(p.phys_dim(), v as u64);
        let r = ctx.bp_ratio(v, &o).unwrap();
        assert!(r.re.abs() <= 1.0 + 1e-9 && r.im.abs() < 1e-9);
        assert_eq!(ctx.bp_ratio(v, &Matrix::identity(p.phys_dim())).unwrap().re, 1.0);
    }
}
