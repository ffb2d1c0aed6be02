use geomot_core::graph_priors::*;
use geomot_core::numerics::{dot, euclidean, norm};
use geomot_core::{DenseMatrix, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

fn floyd_warshall(w: &DenseMatrix, eps: f64) -> DenseMatrix {
    let n = w.rows();
    let mut d = DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else if w.get(i, j) > 0.0 {
            1.0 / (w.get(i, j) + eps)
        } else {
            f64::INFINITY
        }
    });
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d.get(i, k) + d.get(k, j);
                if via < d.get(i, j) {
                    d.set(i, j, via);
                }
            }
        }
    }
    d
}

fn random_connected(n: usize, seed: u64) -> WeightedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DenseMatrix::zeros(n, n);
    // random spanning tree, then extra edges
    for v in 1..n {
        let u = rng.random_range(0..v);
        let x = rng.random_range(0.05..1.0);
        w.set(u, v, x);
        w.set(v, u, x);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < 0.3 {
                let x = rng.random_range(0.05..1.0);
                w.set(i, j, x);
                w.set(j, i, x);
            }
        }
    }
    WeightedGraph {
        node_embeddings: DenseMatrix::zeros(n, 1),
        adjacency_weights: w,
    }
}

fn path_graph(n: usize, w: f64) -> WeightedGraph {
    let mut adj = DenseMatrix::zeros(n, n);
    for i in 0..n - 1 {
        adj.set(i, i + 1, w);
        adj.set(i + 1, i, w);
    }
    WeightedGraph {
        node_embeddings: DenseMatrix::zeros(n, 1),
        adjacency_weights: adj,
    }
}

#[test]
fn kmeans_identical_points_single_cluster() {
    let pts = DenseMatrix::from_fn(5, 2, |_, j| j as f64 + 0.5);
    let c = cluster_prototypes(&pts, 1, 3).unwrap();
    assert_eq!(c.to_nested(), vec![vec![0.5, 1.5]]);
}

#[test]
fn kmeans_two_blobs_match_exhaustive_partition() {
    let pts = DenseMatrix::from_rows(&[
        [0.0, 0.1],
        [0.2, -0.1],
        [-0.1, 0.0],
        [0.1, 0.2],
        [5.0, 5.1],
        [5.2, 4.9],
        [4.9, 5.0],
        [5.1, 5.2],
        [5.0, 4.8],
    ])
    .unwrap();
    // exhaustive oracle over all 2-partitions
    let m = pts.rows();
    let mut best = (f64::INFINITY, vec![]);
    for mask in 1u32..(1 << m) - 1 {
        let mut cents = [[0.0; 2]; 2];
        let mut counts = [0.0; 2];
        for i in 0..m {
            let g = ((mask >> i) & 1) as usize;
            counts[g] += 1.0;
            cents[g][0] += pts.get(i, 0);
            cents[g][1] += pts.get(i, 1);
        }
        for g in 0..2 {
            cents[g][0] /= counts[g];
            cents[g][1] /= counts[g];
        }
        let sse: f64 = (0..m)
            .map(|i| {
                let g = ((mask >> i) & 1) as usize;
                euclidean(pts.row(i), &cents[g]).powi(2)
            })
            .sum();
        if sse < best.0 {
            best = (sse, cents.to_vec());
        }
    }
    let mut found = cluster_prototypes(&pts, 2, 7).unwrap().to_nested();
    found.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    let mut expected = best.1;
    expected.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    for (f, e) in found.iter().zip(&expected) {
        assert!(euclidean(f, e) < 1e-6, "{f:?} vs {e:?}");
    }
}

#[test]
fn kmeans_one_centroid_per_point() {
    let pts = DenseMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 3.0], [2.0, 2.0]]).unwrap();
    let mut c = cluster_prototypes(&pts, 4, 1).unwrap().to_nested();
    let mut p = pts.to_nested();
    c.sort_by(|a, b| a.partial_cmp(b).unwrap());
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(c, p);
}

#[test]
fn kmeans_insufficient_points() {
    let pts = DenseMatrix::zeros(3, 2);
    assert!(matches!(
        cluster_prototypes(&pts, 4, 0),
        Err(Error::InsufficientSamples { needed: 4, got: 3 })
    ));
}

#[test]
fn kmeans_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts = DenseMatrix::from_fn(60, 2, |_, _| rng.random_range(-1.0..1.0));
    assert_eq!(kmeans(&pts, 6, 42).unwrap(), kmeans(&pts, 6, 42).unwrap());
}

#[test]
fn knn_three_nodes_is_triangle() {
    let nodes = DenseMatrix::from_rows(&[[1.0, 0.1], [1.0, 0.5], [0.6, 1.0]]).unwrap();
    let g = build_knn_graph(&nodes, &GraphConfig::default()).unwrap();
    assert_eq!(g.n_edges(), 3);
    for i in 0..3 {
        assert_eq!(g.neighbors(i).count(), 2);
    }
}

#[test]
fn knn_parallel_nodes_weight_one() {
    let nodes = DenseMatrix::from_rows(&[[1.0, 1.0], [2.0, 2.0]]).unwrap();
    let g = build_knn_graph(&nodes, &GraphConfig::default()).unwrap();
    assert!((g.adjacency_weights.get(0, 1) - 1.0).abs() < 1e-12);
}

#[test]
fn knn_matches_full_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let nodes = DenseMatrix::from_fn(5, 3, |_, _| rng.random_range(0.1..1.0));
    let cfg = GraphConfig {
        k_neighbors: 2,
        ..GraphConfig::default()
    };
    let g = build_knn_graph(&nodes, &cfg).unwrap();
    let mut expected = DenseMatrix::zeros(5, 5);
    for i in 0..5 {
        let mut all: Vec<(f64, usize)> = (0..5)
            .filter(|&j| j != i)
            .map(|j| {
                let (a, b) = (nodes.row(i), nodes.row(j));
                let c = dot(a, b)
                    / (norm(a) * norm(b));
                (c, j)
            })
            .collect();
        all.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
        for &(c, j) in all.iter().take(2) {
            let v = expected.get(i, j).max(c);
            expected.set(i, j, v);
            expected.set(j, i, v);
        }
    }
    for (a, b) in g.adjacency_weights.as_slice().iter().zip(expected.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn knn_disconnected_is_error() {
    // two opposite directions: negative similarity drops every edge
    let nodes = DenseMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.01], [-1.0, 0.0], [-1.0, -0.01]]).unwrap();
    let cfg = GraphConfig {
        k_neighbors: 1,
        ..GraphConfig::default()
    };
    assert!(matches!(
        build_knn_graph(&nodes, &cfg),
        Err(Error::Disconnected { components: 2 })
    ));
}

#[test]
fn shortest_path_on_path_graph() {
    let d = shortest_path_matrix(&path_graph(3, 1.0), 0.0).unwrap();
    assert_eq!(d.get(0, 2), 2.0);
    assert_eq!(d.get(0, 1), 1.0);
}

#[test]
fn shortest_path_complete_uniform() {
    let n = 5;
    let adj = DenseMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 0.7 });
    let g = WeightedGraph {
        node_embeddings: DenseMatrix::zeros(n, 1),
        adjacency_weights: adj,
    };
    let d = shortest_path_matrix(&g, 1e-6).unwrap();
    let v = d.get(0, 1);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                assert_eq!(d.get(i, j), v);
            }
        }
    }
}

#[test]
fn shortest_path_matches_floyd_warshall() {
    let g = random_connected(6, 99);
    let d = shortest_path_matrix(&g, 1e-6).unwrap();
    let fw = floyd_warshall(&g.adjacency_weights, 1e-6);
    for (a, b) in d.as_slice().iter().zip(fw.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn shortest_path_disconnected_is_error() {
    let mut g = path_graph(4, 1.0);
    g.adjacency_weights.set(1, 2, 0.0);
    g.adjacency_weights.set(2, 1, 0.0);
    assert!(matches!(
        shortest_path_matrix(&g, 0.0),
        Err(Error::Disconnected { components: 2 })
    ));
}

fn ring_points(n: usize, radius: f64, start: f64, span: f64) -> DenseMatrix {
    DenseMatrix::from_fn(n, 2, |i, j| {
        let t = start + span * i as f64 / (n - 1).max(1) as f64;
        if j == 0 {
            radius * t.cos()
        } else {
            radius * t.sin()
        }
    })
}

#[test]
fn emotion_graph_has_requested_prototypes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts = DenseMatrix::from_fn(64, 2, |_, _| rng.random_range(0.05..1.0));
    let labels: Vec<String> = (0..64).map(|i| format!("e{}", i % 4)).collect();
    let g = build_emotion_graph(&pts, &labels, &GraphConfig::default(), 7).unwrap();
    assert_eq!(g.n_nodes(), 32);
    assert_eq!(g.labels.len(), 32);
    assert_eq!(g.weighted().components(), 1);
}

#[test]
fn emotion_graph_one_prototype_per_class_center() {
    let pts = ring_points(8, 1.0, 0.1, 1.4);
    let labels: Vec<String> = (0..8).map(|i| format!("class{i}")).collect();
    let cfg = GraphConfig {
        n_prototypes: 8,
        ..GraphConfig::default()
    };
    let g = build_emotion_graph(&pts, &labels, &cfg, 1).unwrap();
    for (i, label) in labels.iter().enumerate() {
        let node = g.node_for_label(label).unwrap();
        assert!(euclidean(g.node_embeddings.row(node), pts.row(i)) < 1e-12);
    }
}

#[test]
fn emotion_graph_line_adjacent_closer() {
    // angles with growing gaps: every point's nearest neighbour is its predecessor,
    // so with k = 1 the graph is the path 0-1-...-5
    let angles: [f64; 6] = [0.0, 0.1, 0.3, 0.6, 1.0, 1.5];
    let pts = DenseMatrix::from_fn(6, 2, |i, j| if j == 0 { angles[i].cos() } else { angles[i].sin() });
    let labels: Vec<String> = (0..6).map(|i| format!("l{i}")).collect();
    let cfg = GraphConfig {
        k_neighbors: 1,
        n_prototypes: 6,
        epsilon_length: 1e-6,
    };
    let g = build_emotion_graph(&pts, &labels, &cfg, 3).unwrap();
    let idx: Vec<usize> = labels.iter().map(|l| g.node_for_label(l).unwrap()).collect();
    let hop = |i: usize| 1.0 / ((angles[i + 1] - angles[i]).cos() + 1e-6);
    for a in 0..6 {
        for b in a..6 {
            let expected: f64 = (a..b).map(hop).sum();
            assert!((g.distance_matrix.get(idx[a], idx[b]) - expected).abs() < 1e-9);
            if b > a + 1 {
                assert!(g.distance_matrix.get(idx[a], idx[a + 1]) < g.distance_matrix.get(idx[a], idx[b]));
            }
        }
    }
}

#[test]
fn identity_graph_effective_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cents = DenseMatrix::from_fn(12, 4, |_, _| rng.random_range(0.1..1.0));
    let ids: Vec<String> = (0..12).map(|i| format!("g{i}")).collect();
    let g = build_identity_graph(&cents, &ids, &GraphConfig::default()).unwrap();
    for i in 0..12 {
        assert!(g.weighted().neighbors(i).count() >= 10);
    }

    let three = DenseMatrix::from_rows(&[[1.0, 0.2, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 1.0]]).unwrap();
    let g3 = build_identity_graph(&three, &ids[..3], &GraphConfig::default()).unwrap();
    assert_eq!(g3.weighted().n_edges(), 3);
}

#[test]
fn identity_graph_clusters_separate() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut rows = Vec::new();
    for c in 0..2 {
        for _ in 0..5 {
            let mut v = vec![0.05; 4];
            v[c * 2] = 1.0 + rng.random_range(-0.05..0.05);
            v[c * 2 + 1] = 0.5 + rng.random_range(-0.05..0.05);
            v[(1 - c) * 2] = 0.3;
            rows.push(v);
        }
    }
    let cents = DenseMatrix::from_rows(&rows).unwrap();
    let ids: Vec<String> = (0..10).map(|i| i.to_string()).collect();
    let cfg = GraphConfig {
        k_neighbors: 5,
        ..GraphConfig::default()
    };
    let g = build_identity_graph(&cents, &ids, &cfg).unwrap();
    let d = &g.distance_matrix;
    let max_intra = (0..10)
        .flat_map(|i| (0..10).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && i / 5 == j / 5)
        .map(|(i, j)| d.get(i, j))
        .fold(0.0, f64::max);
    let min_inter = (0..10)
        .flat_map(|i| (0..10).map(move |j| (i, j)))
        .filter(|&(i, j)| i / 5 != j / 5)
        .map(|(i, j)| d.get(i, j))
        .fold(f64::INFINITY, f64::min);
    assert!(max_intra < min_inter, "{max_intra} vs {min_inter}");
}

#[test]
fn graph_json_roundtrip() {
    let nodes = DenseMatrix::from_rows(&[[1.0, 0.1], [1.0, 0.5], [0.6, 1.0], [0.2, 1.0]]).unwrap();
    let g = build_identity_graph(
        &nodes,
        &["a".into(), "b".into(), "c".into(), "d".into()],
        &GraphConfig::default(),
    )
    .unwrap();
    let mut buf = Vec::new();
    g.write_json(&mut buf).unwrap();
    let back = GraphPrior::read_json(&buf[..]).unwrap();
    assert_eq!(back, g);
}

#[test]
fn epsilon_rescaling_preserves_order_on_uniform_weights() {
    let mut g = random_connected(7, 5);
    for v in g.adjacency_weights.as_mut_slice() {
        if *v > 0.0 {
            *v = 0.5;
        }
    }
    let d1 = shortest_path_matrix(&g, 1e-6).unwrap();
    let d2 = shortest_path_matrix(&g, 0.3).unwrap();
    let ratio = (0.5 + 1e-6) / (0.5 + 0.3);
    for (a, b) in d1.as_slice().iter().zip(d2.as_slice()) {
        assert!((a * ratio - b).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn built_priors_satisfy_triangle_inequality(seed in 0u64..5_000, n in 3usize..12) {
        let g = random_connected(n, seed);
        let d = shortest_path_matrix(&g, 1e-6).unwrap();
        for i in 0..n { for j in 0..n { for m in 0..n {
            prop_assert!(d.get(i, j) <= d.get(i, m) + d.get(m, j) + 1e-9);
        }}}
        prop_assert!(d.is_symmetric(0.0));
    }

    #[test]
    fn emotion_graph_deterministic(seed in 0u64..1_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = DenseMatrix::from_fn(40, 2, |_, _| rng.random_range(0.05..1.0));
        let labels: Vec<String> = (0..40).map(|i| format!("e{}", i % 3)).collect();
        let cfg = GraphConfig { n_prototypes: 8, k_neighbors: 4, ..GraphConfig::default() };
        let a = build_emotion_graph(&pts, &labels, &cfg, seed);
        let b = build_emotion_graph(&pts, &labels, &cfg, seed);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "non-deterministic outcome"),
        }
    }
}
