//! Network measures against direct evaluation of their definitions.

use idforge_core::network::{
    clustering_coefficient, degree_centrality, eigenvector_centrality, network_constraint, spearman_rho,
    CollaborationGraph,
};
use proptest::prelude::*;

fn adjacency(g: &CollaborationGraph) -> Vec<Vec<bool>> {
    let n = g.node_count();
    let mut a = vec![vec![false; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        for &j in g.neighbors(i) {
            row[j] = true;
        }
    }
    a
}

/// `C(i) = sum_j (p_ij + sum_q p_iq p_qj)^2` over neighbors `j`, `q != i, j`.
fn burt(a: &[Vec<bool>]) -> Vec<f64> {
    let n = a.len();
    let deg: Vec<usize> = a.iter().map(|r| r.iter().filter(|x| **x).count()).collect();
    let p = |i: usize, j: usize| if a[i][j] { 1.0 / deg[i] as f64 } else { 0.0 };
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| a[i][j])
                .map(|j| {
                    let indirect: f64 = (0..n).filter(|&q| q != i && q != j).map(|q| p(i, q) * p(q, j)).sum();
                    (p(i, j) + indirect).powi(2)
                })
                .sum()
        })
        .collect()
}

fn brute_clustering(a: &[Vec<bool>]) -> Vec<f64> {
    let n = a.len();
    (0..n)
        .map(|v| {
            let nb: Vec<usize> = (0..n).filter(|&u| a[v][u]).collect();
            let k = nb.len();
            if k < 2 {
                return 0.0;
            }
            let mut t = 0;
            for x in 0..k {
                for y in x + 1..k {
                    if a[nb[x]][nb[y]] {
                        t += 1;
                    }
                }
            }
            2.0 * t as f64 / (k * (k - 1)) as f64
        })
        .collect()
}

fn rank_pearson(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn graphs() -> impl Strategy<Value = CollaborationGraph> {
    (1u32..25).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n), 0..(n as usize * 3))
            .prop_map(move |e| CollaborationGraph::from_edges(0..n, e))
    })
}

#[test]
fn canonical_small_graphs() {
    let path = CollaborationGraph::from_edges(0..3, [(0, 1), (1, 2)]);
    assert_eq!(degree_centrality(&path), vec![1.0, 2.0, 1.0]);
    assert_eq!(network_constraint(&path)[0], 1.0);

    let star = CollaborationGraph::from_edges(0..5, (1..5).map(|i| (0, i)));
    assert_eq!(network_constraint(&star)[0], 0.25);
    let e = eigenvector_centrality(&star, 1e-12, 100_000).unwrap();
    assert!((e[0] / e[1] - 2.0).abs() < 1e-9);

    let tri = CollaborationGraph::from_edges(0..3, [(0, 1), (1, 2), (0, 2)]);
    assert_eq!(network_constraint(&tri), vec![1.125; 3]);
    assert_eq!(clustering_coefficient(&tri), vec![1.0; 3]);

    // 4-cycle 0-1-2-3 with chord 0-2: each chord endpoint has 3 neighbors
    // and 2 of the 3 neighbor pairs are adjacent.
    let c4 = CollaborationGraph::from_edges(0..4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]);
    let cc = clustering_coefficient(&c4);
    assert_eq!(cc, vec![2.0 / 3.0, 1.0, 2.0 / 3.0, 1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn constraint_matches_definition(g in graphs()) {
        let a = adjacency(&g);
        for (x, y) in network_constraint(&g).iter().zip(burt(&a)) {
            prop_assert!((x - y).abs() <= 1e-12, "{} vs {}", x, y);
        }
    }

    #[test]
    fn clustering_matches_triangle_count(g in graphs()) {
        prop_assert_eq!(clustering_coefficient(&g), brute_clustering(&adjacency(&g)));
    }

    #[test]
    fn eigenvector_is_a_fixed_point(g in graphs()) {
        let v = eigenvector_centrality(&g, 1e-10, 100_000).unwrap();
        prop_assert!(v.iter().all(|x| *x >= 0.0));
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-9);
        // within each component, A v = lambda v for the component's lambda
        for i in 0..g.node_count() {
            let nb = g.neighbors(i);
            if nb.is_empty() {
                prop_assert_eq!(v[i], 0.0);
                continue;
            }
            let av: f64 = nb.iter().map(|&j| v[j]).sum();
            for &j in nb {
                let avj: f64 = g.neighbors(j).iter().map(|&k| v[k]).sum();
                // neighbors share the component's eigenvalue
                prop_assert!((av * v[j] - avj * v[i]).abs() < 1e-6, "node {} vs {}", i, j);
            }
        }
    }

    #[test]
    fn spearman_matches_rank_pearson(
        x in proptest::collection::vec(0u8..20, 2..100),
        seed in any::<u64>(),
    ) {
        let x: Vec<f64> = x.iter().map(|v| f64::from(*v)).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| ((i as u64).wrapping_mul(seed | 1) % 17) as f64 + v * 0.5).collect();
        match spearman_rho(&x, &y).unwrap() {
            Some(r) => prop_assert!((r - rank_pearson(&x, &y)).abs() <= 1e-12),
            None => prop_assert!(rank_pearson(&x, &y).is_nan()),
        }
    }
}
