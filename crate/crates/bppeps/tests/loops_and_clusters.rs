use std::collections::{BTreeMap, BTreeSet};

use bppeps::cluster::{enumerate_clusters, ursell, Cluster, InteractionGraph};
use bppeps::graph::{Graph, Loop};
use num_rational::Ratio;

/// Every nonempty edge subset of weight `≤ m` that is connected with all
/// non-anchored degrees `≥ 2`, by exhaustive search.
fn brute_force_loops(g: &Graph, m: usize, anchored: &[usize]) -> BTreeSet<Vec<usize>> {
    let e = g.edge_count();
    assert!(e <= 16);
    let mut out = BTreeSet::new();
    for mask in 1u32..(1 << e) {
        if mask.count_ones() as usize > m {
            continue;
        }
        let edges: Vec<usize> = (0..e).filter(|i| mask >> i & 1 == 1).collect();
        let l = Loop::from_edge_ids(g, edges.clone());
        if l.is_valid(g, anchored) {
            out.insert(edges);
        }
    }
    out
}

fn test_graphs() -> Vec<(&'static str, Graph)> {
    vec![
        ("K3", Graph::complete(3).unwrap()),
        ("C4", Graph::cycle(4).unwrap()),
        ("K4", Graph::complete(4).unwrap()),
        ("grid 2x3 periodic", Graph::grid(2, 3, true).unwrap()),
        ("grid 3x3", Graph::grid(3, 3, false).unwrap()),
        ("3-regular on 8", Graph::random_regular(8, 3, 4).unwrap()),
        ("K5", Graph::complete(5).unwrap()),
    ]
}

#[test]
fn loop_enumeration_matches_brute_force() {
    for (name, g) in test_graphs() {
        assert!(g.edge_count() <= 12, "{name}");
        for m in [3, 4, 6, g.edge_count()] {
            let got: BTreeSet<Vec<usize>> = g.enumerate_loops(m).into_iter().map(|l| l.edges).collect();
            assert_eq!(got, brute_force_loops(&g, m, &[]), "{name}, m = {m}");
        }
    }
}

#[test]
fn anchored_enumeration_matches_brute_force() {
    for (name, g) in test_graphs() {
        for anchors in [vec![vec![0]], vec![vec![0], vec![g.vertex_count() - 1]]] {
            let flat: Vec<usize> = anchors.iter().flatten().copied().collect();
            for m in [1, 2, 4] {
                let got: BTreeSet<Vec<usize>> =
                    g.enumerate_anchored_loops(&anchors, m).into_iter().map(|a| a.lp.edges).collect();
                assert_eq!(got, brute_force_loops(&g, m, &flat), "{name}, anchors {anchors:?}, m = {m}");
            }
        }
    }
}

#[test]
fn small_loop_examples() {
    assert_eq!(Graph::complete(3).unwrap().enumerate_loops(3).len(), 1);
    assert_eq!(Graph::complete(3).unwrap().enumerate_loops(2).len(), 0);
    let k4 = Graph::complete(4).unwrap();
    let tri = k4.enumerate_loops(3);
    assert_eq!(tri.len(), 4);
    assert!(tri.iter().all(|l| l.weight() == 3 && l.vertices.len() == 3));

    let path = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    let a = path.enumerate_anchored_loops(&[vec![0], vec![2]], 2);
    assert_eq!(a.len(), 1);
    assert_eq!(a[0].lp.edges.len(), 2);
    assert!(a[0].touches_all_anchors());

    let k3 = Graph::complete(3).unwrap();
    assert!(k3.enumerate_anchored_loops(&[vec![0]], 1).is_empty());
}

/// Ursell coefficient by summing `(−1)^{|E(C)|}` over every connected
/// spanning edge subset of the interaction graph.
fn brute_force_ursell(w: &Cluster, loops: &[Loop]) -> Ratio<i64> {
    let occ: Vec<usize> = w.items.iter().flat_map(|&(i, a)| std::iter::repeat_n(i, a)).collect();
    let n = occ.len();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if occ[i] == occ[j] || loops[occ[i]].shares_vertex(&loops[occ[j]]) {
                pairs.push((i, j));
            }
        }
    }
    assert!(pairs.len() <= 20);
    let mut total: i64 = 0;
    for mask in 0u32..(1 << pairs.len()) {
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        for (k, &(i, j)) in pairs.iter().enumerate() {
            if mask >> k & 1 == 1 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
        let root = find(&mut parent, 0);
        if (0..n).all(|x| find(&mut parent, x) == root) {
            total += if mask.count_ones() % 2 == 0 { 1 } else { -1 };
        }
    }
    let fact: i64 = w.items.iter().map(|&(_, a)| (1..=a as i64).product::<i64>()).product();
    Ratio::new(total, fact)
}

#[test]
fn ursell_matches_brute_force() {
    for g in [Graph::complete(4).unwrap(), Graph::grid(2, 3, true).unwrap(), Graph::grid(3, 3, false).unwrap()] {
        let loops = g.enumerate_loops(4);
        let clusters = enumerate_clusters(&loops, 8);
        assert!(!clusters.is_empty());
        let mut checked = 0;
        for w in &clusters {
            let ig = InteractionGraph::build(w, &loops);
            assert!(ig.is_connected());
            if w.occurrences() <= 6 {
                assert_eq!(ursell(w, &loops).unwrap(), brute_force_ursell(w, &loops), "{w:?}");
                checked += 1;
            }
        }
        assert!(checked > 10);
    }
}

#[test]
fn repeated_single_loop_gives_log_taylor_series() {
    let g = Graph::complete(3).unwrap();
    let loops = g.enumerate_loops(3);
    for k in 1..=8usize {
        let w = Cluster::from_counts(&BTreeMap::from([(0, k)]));
        let sign = if k % 2 == 1 { 1 } else { -1 };
        assert_eq!(ursell(&w, &loops).unwrap(), Ratio::new(sign, k as i64), "k = {k}");
    }
    let w1 = Cluster::single(0);
    let w2 = Cluster::from_counts(&BTreeMap::from([(0, 2)]));
    assert_eq!(brute_force_ursell(&w1, &loops), Ratio::from_integer(1));
    assert_eq!(brute_force_ursell(&w2, &loops), Ratio::new(-1, 2));

    // Σ_k φ(ℓ^k) x^k reproduces log(1 + x) to the truncation order.
    for x in [0.01, -0.05, 0.2] {
        let partial: f64 = (1..=12usize)
            .map(|k| {
                let r = ursell(&Cluster::from_counts(&BTreeMap::from([(0, k)])), &loops).unwrap();
                (*r.numer() as f64 / *r.denom() as f64) * f64::powi(x, k as i32)
            })
            .sum();
        assert!((partial - f64::ln_1p(x)).abs() < 2.0 * f64::powi(f64::abs(x), 13), "x = {x}");
    }
}

#[test]
fn cluster_examples() {
    let k3 = Graph::complete(3).unwrap();
    let loops = k3.enumerate_loops(3);
    let cl = enumerate_clusters(&loops, 6);
    let items: Vec<Vec<(usize, usize)>> = cl.iter().map(|w| w.items.clone()).collect();
    assert_eq!(items, vec![vec![(0, 1)], vec![(0, 2)]]);

    // Two triangles sharing the edge 1–2.
    let g = Graph::from_edges(4, &[(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]).unwrap();
    let loops = g.enumerate_loops(3);
    assert_eq!(loops.len(), 2);
    let got: BTreeSet<Vec<(usize, usize)>> = enumerate_clusters(&loops, 6).into_iter().map(|w| w.items).collect();
    let want: BTreeSet<Vec<(usize, usize)>> =
        [vec![(0, 1)], vec![(1, 1)], vec![(0, 2)], vec![(1, 2)], vec![(0, 1), (1, 1)]].into_iter().collect();
    assert_eq!(got, want);
}

#[test]
fn disjoint_loops_never_form_a_cluster() {
    // Two triangles joined by a bridge edge do not interact.
    let g = Graph::from_edges(6, &[(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (3, 5)]).unwrap();
    let loops = g.enumerate_loops(3);
    assert_eq!(loops.len(), 2);
    let clusters = enumerate_clusters(&loops, 6);
    assert!(clusters.iter().all(|w| w.items.len() == 1));
    let w = Cluster::from_counts(&BTreeMap::from([(0, 1), (1, 1)]));
    assert_eq!(ursell(&w, &loops).unwrap(), Ratio::from_integer(0));
}
