use geomot_core::graph_priors::{GraphPrior, WeightedGraph};
use geomot_core::traversal::{build_trajectory, graph_path, random_simple_path, Strategy, TrajectoryRecord};
use geomot_core::{DenseMatrix, Error};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;

fn prior(adj: DenseMatrix, emb: DenseMatrix) -> GraphPrior {
    let n = adj.rows();
    GraphPrior::from_weighted(
        WeightedGraph { node_embeddings: emb, adjacency_weights: adj },
        EPS,
        (0..n).map(|i| format!("n{i}")).collect(),
    )
    .unwrap()
}

fn path_graph(n: usize) -> GraphPrior {
    let mut adj = DenseMatrix::zeros(n, n);
    for i in 0..n - 1 {
        adj.set(i, i + 1, 1.0);
        adj.set(i + 1, i, 1.0);
    }
    prior(adj, DenseMatrix::from_fn(n, 2, |i, c| if c == 0 { i as f64 } else { 0.0 }))
}

/// Random connected graph: a random spanning tree plus extra random edges.
fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> GraphPrior {
    let mut adj = DenseMatrix::zeros(n, n);
    let link = |adj: &mut DenseMatrix, i: usize, j: usize, w: f64| {
        adj.set(i, j, w);
        adj.set(j, i, w);
    };
    for v in 1..n {
        let u = rng.random_range(0..v);
        link(&mut adj, u, v, rng.random_range(0.05..1.0));
    }
    for _ in 0..n {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        if i != j {
            link(&mut adj, i, j, rng.random_range(0.05..1.0));
        }
    }
    let emb = DenseMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
    prior(adj, emb)
}

/// Floyd–Warshall with next-hop reconstruction.
fn floyd_warshall_path(g: &GraphPrior, s: usize, t: usize) -> Vec<usize> {
    let n = g.n_nodes();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    let mut next = vec![vec![usize::MAX; n]; n];
    for i in 0..n {
        d[i][i] = 0.0;
        next[i][i] = i;
        for j in 0..n {
            let w = g.adjacency_weights.get(i, j);
            if i != j && w > 0.0 {
                d[i][j] = 1.0 / (w + EPS);
                next[i][j] = j;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                    next[i][j] = next[i][k];
                }
            }
        }
    }
    let mut path = vec![s];
    let mut u = s;
    while u != t {
        u = next[u][t];
        path.push(u);
    }
    path
}

fn is_simple_walk(g: &GraphPrior, path: &[usize]) -> bool {
    let mut seen = std::collections::BTreeSet::new();
    path.iter().all(|&u| seen.insert(u)) && path.windows(2).all(|w| g.edge_length(w[0], w[1]).is_some())
}

#[test]
fn path_to_self_is_single_node() {
    assert_eq!(graph_path(&path_graph(4), 2, 2).unwrap(), [2]);
}

#[test]
fn path_graph_is_walked_in_order() {
    assert_eq!(graph_path(&path_graph(3), 0, 2).unwrap(), [0, 1, 2]);
    assert_eq!(graph_path(&path_graph(5), 4, 1).unwrap(), [4, 3, 2, 1]);
}

#[test]
fn equal_length_paths_prefer_lowest_index() {
    // square 0-1-3 and 0-2-3 with unit weights
    let mut adj = DenseMatrix::zeros(4, 4);
    for (i, j) in [(0, 1), (1, 3), (0, 2), (2, 3)] {
        adj.set(i, j, 1.0);
        adj.set(j, i, 1.0);
    }
    let g = prior(adj, DenseMatrix::zeros(4, 1));
    assert_eq!(graph_path(&g, 0, 3).unwrap(), [0, 1, 3]);
    assert_eq!(graph_path(&g, 3, 0).unwrap(), [3, 1, 0]);
}

#[test]
fn weighted_paths_match_floyd_warshall() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let g = random_graph(6, &mut rng);
        for s in 0..6 {
            for t in 0..6 {
                assert_eq!(graph_path(&g, s, t).unwrap(), floyd_warshall_path(&g, s, t), "{s}->{t}");
            }
        }
    }
}

#[test]
fn unknown_nodes_are_rejected() {
    let g = path_graph(3);
    assert!(matches!(graph_path(&g, 0, 7), Err(Error::UnknownNode(7))));
    let emb = g.node_embeddings.clone();
    assert!(matches!(
        build_trajectory(&g, &emb, 9, 0, Strategy::Graph, 4, 0),
        Err(Error::UnknownNode(9))
    ));
}

#[test]
fn zero_steps_per_edge_is_rejected() {
    let g = path_graph(3);
    assert!(build_trajectory(&g, &g.node_embeddings, 0, 2, Strategy::Graph, 0, 0).is_err());
}

#[test]
fn linear_single_step_is_the_two_endpoints() {
    let g = path_graph(4);
    let emb = &g.node_embeddings;
    let t = build_trajectory(&g, emb, 0, 3, Strategy::Linear, 1, 0).unwrap();
    assert_eq!(t.latent_points.to_nested(), vec![emb.row(0).to_vec(), emb.row(3).to_vec()]);
    assert_eq!(t.node_sequence, [0, 3]);
}

#[test]
fn full_strategy_hops_directly() {
    let g = path_graph(4);
    let t = build_trajectory(&g, &g.node_embeddings, 0, 3, Strategy::Full, 3, 0).unwrap();
    assert_eq!(t.waypoints, [0, 3]);
    assert_eq!(t.n_steps(), 3);
}

#[test]
fn graph_strategy_visits_every_intermediate_prototype() {
    let g = path_graph(5);
    let emb = DenseMatrix::from_fn(5, 2, |i, c| ((i * 7 + c * 3) % 5) as f64 * 0.37);
    let t = build_trajectory(&g, &emb, 0, 4, Strategy::Graph, 3, 0).unwrap();
    assert_eq!(t.n_steps(), 12);
    for (k, u) in (0..5).enumerate() {
        assert_eq!(t.latent_points.row(3 * k), emb.row(u));
        assert_eq!(t.node_sequence[3 * k], u);
    }
}

#[test]
fn random_strategy_is_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = random_graph(9, &mut rng);
    let emb = g.node_embeddings.clone();
    for seed in 0..10 {
        let a = build_trajectory(&g, &emb, 0, 8, Strategy::Random, 2, seed).unwrap();
        let b = build_trajectory(&g, &emb, 0, 8, Strategy::Random, 2, seed).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn random_paths_are_simple_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for seed in 0..30 {
        let g = random_graph(10, &mut rng);
        let hops = bfs_hops(&g, 0, 9);
        let p = random_simple_path(&g, 0, 9, seed).unwrap();
        assert_eq!((p[0], *p.last().unwrap()), (0, 9));
        assert!(is_simple_walk(&g, &p));
        assert!(p.len() - 1 <= 2 * hops.max(1));
    }
}

fn bfs_hops(g: &GraphPrior, s: usize, t: usize) -> usize {
    let n = g.n_nodes();
    let mut dist = vec![usize::MAX; n];
    dist[s] = 0;
    let mut frontier = vec![s];
    while !frontier.is_empty() {
        let mut next = vec![];
        for u in frontier {
            for v in 0..n {
                if g.edge_length(u, v).is_some() && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    dist[t]
}

#[test]
fn spline_through_collinear_even_knots_is_the_polyline() {
    let g = path_graph(4);
    let s = build_trajectory(&g, &g.node_embeddings, 0, 3, Strategy::Spline, 5, 0).unwrap();
    let p = build_trajectory(&g, &g.node_embeddings, 0, 3, Strategy::Graph, 5, 0).unwrap();
    for r in 0..s.latent_points.rows() {
        for (a, b) in s.latent_points.row(r).iter().zip(p.latent_points.row(r)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

/// Natural cubic spline evaluated from a dense solve of the full knot system.
fn dense_spline(t: &[f64], y: &[f64], x: f64) -> f64 {
    let n = t.len();
    let mut a = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    a[(0, 0)] = 1.0;
    a[(n - 1, n - 1)] = 1.0;
    for i in 1..n - 1 {
        let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
        a[(i, i - 1)] = h0;
        a[(i, i)] = 2.0 * (h0 + h1);
        a[(i, i + 1)] = h1;
        rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    let m = a.lu().solve(&rhs).unwrap();
    let k = (0..n - 1).find(|&k| x <= t[k + 1]).unwrap_or(n - 2);
    let h = t[k + 1] - t[k];
    let (p, q) = ((t[k + 1] - x) / h, (x - t[k]) / h);
    p * y[k] + q * y[k + 1] + ((p.powi(3) - p) * m[k] + (q.powi(3) - q) * m[k + 1]) * h * h / 6.0
}

#[test]
fn spline_matches_dense_natural_spline() {
    let g = path_graph(4);
    let emb = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.8], vec![1.5, -0.2], vec![3.0, 0.4]]).unwrap();
    let steps = 6;
    let traj = build_trajectory(&g, &emb, 0, 3, Strategy::Spline, steps, 0).unwrap();
    let mut knots = vec![0.0];
    for i in 1..4 {
        let d: f64 = emb.row(i).iter().zip(emb.row(i - 1)).map(|(a, b)| (a - b).powi(2)).sum();
        knots.push(knots[i - 1] + d.sqrt());
    }
    let total = knots[3];
    let samples = 3 * steps;
    for s in 0..=samples {
        let x = total * s as f64 / samples as f64;
        for c in 0..2 {
            let y: Vec<f64> = (0..4).map(|i| emb.get(i, c)).collect();
            assert!((traj.latent_points.get(s, c) - dense_spline(&knots, &y, x)).abs() < 1e-10);
        }
    }
}

#[test]
fn strategy_names_round_trip() {
    for s in Strategy::ALL {
        assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
    }
    assert!("zigzag".parse::<Strategy>().is_err());
}

#[test]
fn trajectory_json_carries_points_nodes_and_strategy() {
    let g = path_graph(3);
    let t = build_trajectory(&g, &g.node_embeddings, 0, 2, Strategy::Graph, 2, 0).unwrap();
    let v: serde_json::Value = serde_json::to_value(&t).unwrap();
    assert_eq!(v["strategy"], "graph");
    assert_eq!(v["node_sequence"].as_array().unwrap().len(), 5);
    assert_eq!(v["latent_points"].as_array().unwrap().len(), 5);
    let back: TrajectoryRecord = serde_json::from_value(v).unwrap();
    assert_eq!(back, t);
}

fn any_strategy() -> impl proptest::strategy::Strategy<Value = Strategy> {
    prop::sample::select(Strategy::ALL.to_vec())
}

proptest! {
    #[test]
    fn every_strategy_starts_and_ends_on_the_endpoints(
        seed in 0u64..10_000,
        strategy in any_strategy(),
        steps in 1usize..6,
        s in 0usize..8,
        t in 0usize..8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(8, &mut rng);
        let emb = g.node_embeddings.clone();
        let traj = build_trajectory(&g, &emb, s, t, strategy, steps, seed).unwrap();
        traj.validate().unwrap();
        let last = traj.latent_points.rows() - 1;
        prop_assert_eq!(traj.latent_points.row(0), emb.row(s));
        prop_assert_eq!(traj.latent_points.row(last), emb.row(t));
        prop_assert_eq!(traj.node_sequence[0], s);
        prop_assert_eq!(traj.node_sequence[last], t);
        prop_assert_eq!(traj.node_sequence.len(), traj.latent_points.rows());
    }
}
