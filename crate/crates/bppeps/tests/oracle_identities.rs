use bppeps::bp::find_fixed_point;
use bppeps::cluster::free_energy;
use bppeps::graph::Graph;
use bppeps::loops::{bp_normalization, loop_activity};
use bppeps::oracle::{exact_contract_with, exact_norm, OracleMethod};
use bppeps::peps::generate_random_peps;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn isometric_network_has_z_d_to_the_edges() {
    for g in [Graph::complete(3).unwrap(), Graph::cycle(4).unwrap(), Graph::complete(4).unwrap()] {
        let p = generate_random_peps(&g, 2, 5, 0.0).unwrap();
        let z = exact_norm(&p).unwrap();
        let want = 2f64.powi(g.edge_count() as i32);
        assert!(rel(z.value.re, want) < 1e-10, "{} vs {want}", z.value);
        assert!(z.value.im.abs() < 1e-9 * want);
    }
}

#[test]
fn both_oracle_algorithms_agree() {
    for g in [Graph::complete(3).unwrap(), Graph::complete(4).unwrap(), Graph::grid(2, 3, true).unwrap()] {
        let p = generate_random_peps(&g, 2, 11, 0.1).unwrap();
        let a = exact_contract_with(&p, &[], OracleMethod::EdgeEnumeration, None).unwrap();
        let order: Vec<usize> = (0..g.vertex_count()).rev().collect();
        let b = exact_contract_with(&p, &[], OracleMethod::SequentialContraction, Some(&order)).unwrap();
        assert!((a.value - b.value).norm() <= 1e-10 * a.value.norm(), "{} vs {}", a.value, b.value);
    }
}

#[test]
fn triangle_single_loop_identity() {
    let g = Graph::complete(3).unwrap();
    for eps in [0.0, 0.02, 0.1, 0.3] {
        let p = generate_random_peps(&g, 2, 3, eps).unwrap();
        let (mu, log) = find_fixed_point(&p, 1e-13, 2000).unwrap();
        assert!(log.converged);
        let norm = bp_normalization(&p, &mu).unwrap();
        let loops = g.enumerate_loops(3);
        assert_eq!(loops.len(), 1);
        let z_l = loop_activity(&p, &mu, &norm, &loops[0]).unwrap().value;
        let exact = exact_norm(&p).unwrap().value.re;
        let approx = norm.log_z_bp.exp() * (1.0 + z_l.re);
        assert!(rel(approx, exact) < 1e-9, "eps {eps}: {approx} vs {exact}");
        let fe = free_energy(&p, &mu, &norm, 3).unwrap();
        assert!((fe.f_m - exact.ln()).abs() < 1e-9 || eps > 0.0);
    }
}
