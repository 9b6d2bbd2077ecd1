use bppeps::error::Error;
use bppeps::graph::Graph;
use bppeps::locality::{
    fit_decay_rate, from_scratch, guarded_perturbation, incremental_observable_update, observable_locality_sweep,
    run_perturbation_experiment, strength_guard,
};
use bppeps::peps::{generate_random_peps, measure_injectivity, random_hermitian};

#[test]
fn perturbations_respect_the_lightcone_bit_for_bit() {
    let g = Graph::grid(2, 6, true).unwrap();
    let p = generate_random_peps(&g, 2, 31, 0.04).unwrap();
    for seed in 0..6u64 {
        let region = [seed as usize % g.vertex_count()];
        let t = run_perturbation_experiment(&p, &region, 0.01, seed, 1e-13).unwrap();
        assert_eq!(t.total_violations(), 0, "seed {seed}: {:?}", t.lightcone_violations);
        assert!(t.weyl_ok && t.weyl_max_shift <= 0.01 + 1e-10);
        assert!(t.epsilon_after < t.eps_star);
        assert!(t.envelope_ok, "seed {seed}: {:?}", t.rows);
        for row in &t.rows {
            assert!(row.max_delta <= row.bound + t.noise_floor);
        }
    }
}

#[test]
fn deltas_shrink_with_distance() {
    let g = Graph::cycle(12).unwrap();
    let p = generate_random_peps(&g, 2, 4, 0.05).unwrap();
    let t = run_perturbation_experiment(&p, &[0], 0.02, 9, 1e-14).unwrap();
    let above_floor: Vec<f64> = t.rows.iter().map(|r| r.max_delta).filter(|&d| d > 1e-12).collect();
    assert!(above_floor.len() >= 3);
    assert!(above_floor.windows(2).all(|w| w[1] < w[0]), "{:?}", t.rows);
    let fit = t.inv_xi_fit.unwrap();
    assert!(fit > 0.0);
    let csv = t.to_csv().unwrap();
    assert!(csv.starts_with("r,max_delta,bound\n"));
}

#[test]
fn zero_strength_is_a_no_op() {
    let g = Graph::grid(2, 3, true).unwrap();
    let p = generate_random_peps(&g, 2, 1, 0.03).unwrap();
    let t = run_perturbation_experiment(&p, &[2], 0.0, 0, 1e-13).unwrap();
    assert!(t.edge_deltas.iter().all(|e| e.delta == 0.0));
    assert_eq!(t.total_violations(), 0);
}

#[test]
fn stability_guard_rejects_large_perturbations() {
    let g = Graph::grid(2, 3, true).unwrap();
    let p = generate_random_peps(&g, 2, 1, 0.15).unwrap();
    let rep = measure_injectivity(&p).unwrap();
    let guard = strength_guard(&p, &rep, &[0]);
    assert!(guard > 0.0);
    let err = guarded_perturbation(&p, &[0], 2.0 * guard + 0.05, 3).unwrap_err();
    assert!(matches!(err, Error::StabilityGuard(_)));
    let (_, after, shift) = guarded_perturbation(&p, &[0], 0.5 * guard, 3).unwrap();
    assert!(shift <= 0.5 * guard + 1e-10);
    assert!(after.epsilon < 0.2);
}

#[test]
fn decay_fit_recovers_slope() {
    let pts: Vec<(usize, f64)> = (1..8).map(|r| (r, 3.0 * (-0.7 * r as f64).exp())).collect();
    assert!((fit_decay_rate(&pts).unwrap() - 0.7).abs() < 1e-12);
    assert!(fit_decay_rate(&[(1, 1.0)]).is_none());
    assert!(fit_decay_rate(&[(1, 1e-20), (2, 1e-21)]).is_none());
}

#[test]
fn incremental_update_agrees_with_recomputation() {
    for (g, b, region) in [(Graph::grid(2, 3, true).unwrap(), 5, 0), (Graph::cycle(10).unwrap(), 5, 0)] {
        let p = generate_random_peps(&g, 2, 13, 0.03).unwrap();
        let op = random_hermitian(p.phys_dim(), 2);
        let base = from_scratch(&p, b, &op, 6, 1e-13).unwrap();
        let (p_new, _, _) = guarded_perturbation(&p, &[region], 0.01, 5).unwrap();
        let truth = from_scratch(&p_new, b, &op, 6, 1e-13).unwrap();
        let diam = g.diameter();
        for r_th in 1..=diam {
            let inc = incremental_observable_update(Some(&base), &p_new, &[region], b, &op, r_th, 6, 1e-13).unwrap();
            let diff = (inc.value - truth.estimate.value).norm();
            assert!(diff <= inc.plan.certificate + 1e-12, "R_th={r_th}: {diff} > {}", inc.plan.certificate);
            if r_th < diam {
                assert!(
                    inc.plan.multiplies < truth.multiplies,
                    "R_th={r_th}: {} vs {}",
                    inc.plan.multiplies,
                    truth.multiplies
                );
            } else {
                assert!(inc.plan.full_recompute);
                assert_eq!(diff, 0.0);
            }
        }
    }
}

#[test]
fn incremental_update_on_unchanged_network_reuses_cache() {
    let g = Graph::grid(2, 3, true).unwrap();
    let p = generate_random_peps(&g, 2, 2, 0.03).unwrap();
    let op = random_hermitian(p.phys_dim(), 1);
    let base = from_scratch(&p, 3, &op, 4, 1e-13).unwrap();
    let inc = incremental_observable_update(Some(&base), &p, &[0], 3, &op, 1, 4, 1e-13).unwrap();
    assert_eq!(inc.value, base.estimate.value);
    assert_eq!(inc.plan.multiplies, 0);
    let none = incremental_observable_update(None, &p, &[0], 3, &op, 1, 4, 1e-13).unwrap();
    assert!(none.plan.warning.is_some());
    assert!((none.value - base.estimate.value).norm() < 1e-14);
}

#[test]
fn observable_shifts_decrease_with_distance() {
    let g = Graph::cycle(10).unwrap();
    let p = generate_random_peps(&g, 2, 3, 0.04).unwrap();
    let op = random_hermitian(p.phys_dim(), 4);
    let rep = observable_locality_sweep(&p, &[0.0, 0.01, 0.02], 0, &op, 6, 1, 1e-13).unwrap();
    for s in &rep.summaries {
        assert!(s.envelope_ok, "strength {}: {:?}", s.strength, s.by_distance);
        if s.strength == 0.0 {
            assert!(s.by_distance.iter().all(|&(_, x, y)| x == 0.0 && y == 0.0));
        }
    }
}
