//! Latent trajectories between emotion prototypes under several path strategies. The
//! identity factor is never touched here: trajectories live in the attribute space only.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_priors::{nearest_node, GraphPrior};
use crate::numerics::DenseMatrix;

pub const DEFAULT_STEPS_PER_EDGE: usize = 8;
/// Random-path attempts before falling back to the shortest path.
const RANDOM_PATH_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Graph,
    Linear,
    Spline,
    Random,
    Full,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Graph,
        Strategy::Linear,
        Strategy::Spline,
        Strategy::Random,
        Strategy::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Graph => "graph",
            Strategy::Linear => "linear",
            Strategy::Spline => "spline",
            Strategy::Random => "random",
            Strategy::Full => "full",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// (T+1) × p attribute-factor states.
    pub latent_points: DenseMatrix,
    /// Emotion node of every state; empty when unassigned.
    pub node_sequence: Vec<usize>,
    /// Prototypes the trajectory was interpolated through.
    pub waypoints: Vec<usize>,
    pub strategy: Strategy,
    pub steps_per_edge: usize,
}

impl TrajectoryRecord {
    pub fn n_steps(&self) -> usize {
        self.latent_points.rows().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_points.rows() < 2 {
            return Err(Error::Validation("trajectory needs at least two states".into()));
        }
        if !self.node_sequence.is_empty() && self.node_sequence.len() != self.latent_points.rows() {
            return Err(Error::Dimension(format!(
                "{} nodes for {} states",
                self.node_sequence.len(),
                self.latent_points.rows()
            )));
        }
        Ok(())
    }
}

fn check_node(graph: &GraphPrior, u: usize) -> Result<()> {
    if u >= graph.n_nodes() {
        return Err(Error::UnknownNode(u));
    }
    Ok(())
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest path under edge lengths `1/(w + ε)`.
///
/// Among equally short paths the one whose node sequence, read from the target back to
/// the source, always steps to the lowest-index predecessor is returned.
pub fn graph_path(graph: &GraphPrior, source: usize, target: usize) -> Result<Vec<usize>> {
    check_node(graph, source)?;
    check_node(graph, target)?;
    let n = graph.n_nodes();
    let mut dist = vec![f64::INFINITY; n];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::from([Entry(0.0, source)]);
    while let Some(Entry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for v in 0..n {
            if let Some(len) = graph.edge_length(u, v) {
                let nd = d + len;
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Entry(nd, v));
                }
            }
        }
    }
    if !dist[target].is_finite() {
        return Err(Error::Disconnected { components: 2 });
    }
    let mut path = vec![target];
    let mut v = target;
    while v != source {
        let tol = 1e-12 * dist[v].max(1.0);
        let pred = (0..n)
            .find(|&u| {
                graph
                    .edge_length(u, v)
                    .is_some_and(|len| dist[u] < dist[v] && (dist[u] + len - dist[v]).abs() <= tol)
            })
            .expect("a predecessor on a shortest path exists");
        path.push(pred);
        v = pred;
    }
    path.reverse();
    Ok(path)
}

/// Number of edges on the unweighted shortest path.
fn hop_distance(graph: &GraphPrior, source: usize, target: usize) -> usize {
    let n = graph.n_nodes();
    let mut hops = vec![usize::MAX; n];
    hops[source] = 0;
    let mut queue = std::collections::VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if graph.edge_length(u, v).is_some() && hops[v] == usize::MAX {
                hops[v] = hops[u] + 1;
                queue.push_back(v);
            }
        }
    }
    hops[target]
}

/// Seeded self-avoiding walk with restart, accepted once it reaches `target` within
/// `2 × hop_distance` edges.
pub fn random_simple_path(graph: &GraphPrior, source: usize, target: usize, seed: u64) -> Result<Vec<usize>> {
    check_node(graph, source)?;
    check_node(graph, target)?;
    if source == target {
        return Ok(vec![source]);
    }
    let max_len = 2 * hop_distance(graph, source, target).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.n_nodes();
    for _ in 0..RANDOM_PATH_ATTEMPTS {
        let mut path = vec![source];
        let mut visited = vec![false; n];
        visited[source] = true;
        while path.len() <= max_len {
            let u = *path.last().expect("non-empty");
            let options: Vec<usize> = (0..n)
                .filter(|&v| !visited[v] && graph.edge_length(u, v).is_some())
                .collect();
            let Some(&v) = options.choose(&mut rng) else {
                break;
            };
            path.push(v);
            visited[v] = true;
            if v == target {
                return Ok(path);
            }
        }
    }
    graph_path(graph, source, target)
}

fn lerp_row(out: &mut Vec<Vec<f64>>, a: &[f64], b: &[f64], steps: usize, include_start: bool) {
    let first = if include_start { 0 } else { 1 };
    for s in first..=steps {
        let t = s as f64 / steps as f64;
        out.push(a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect());
    }
}

fn polyline(emb: &DenseMatrix, nodes: &[usize], steps_per_edge: usize) -> Vec<Vec<f64>> {
    let mut out = vec![emb.row(nodes[0]).to_vec()];
    for w in nodes.windows(2) {
        lerp_row(&mut out, emb.row(w[0]), emb.row(w[1]), steps_per_edge, false);
    }
    out
}

/// Second derivatives of a natural cubic spline through `(t_i, y_i)`.
fn natural_spline_second_derivatives(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // tridiagonal system for interior knots (Thomas algorithm)
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = t[i] - t[i - 1];
        let h1 = t[i + 1] - t[i];
        let a = h0;
        let b = 2.0 * (h0 + h1);
        let cc = h1;
        let rhs = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
        let denom = b - a * c[i - 1];
        c[i] = cc / denom;
        d[i] = (rhs - a * d[i - 1]) / denom;
    }
    for i in (1..n - 1).rev() {
        m[i] = d[i] - c[i] * m[i + 1];
    }
    m
}

fn spline(emb: &DenseMatrix, nodes: &[usize], steps_per_edge: usize) -> Vec<Vec<f64>> {
    let k = nodes.len();
    let dim = emb.cols();
    let mut t = vec![0.0; k];
    for i in 1..k {
        t[i] = t[i - 1] + crate::numerics::euclidean(emb.row(nodes[i - 1]), emb.row(nodes[i]));
    }
    let total = t[k - 1];
    let samples = (k - 1) * steps_per_edge;
    if k < 3 || total <= 0.0 || t.windows(2).any(|w| w[1] <= w[0]) {
        return polyline(emb, nodes, steps_per_edge);
    }
    let per_dim: Vec<(Vec<f64>, Vec<f64>)> = (0..dim)
        .map(|c| {
            let y: Vec<f64> = nodes.iter().map(|&u| emb.get(u, c)).collect();
            let m = natural_spline_second_derivatives(&t, &y);
            (y, m)
        })
        .collect();
    (0..=samples)
        .map(|s| {
            if s == 0 {
                return emb.row(nodes[0]).to_vec();
            }
            if s == samples {
                return emb.row(nodes[k - 1]).to_vec();
            }
            let x = total * s as f64 / samples as f64;
            let seg = (0..k - 1).find(|&i| x <= t[i + 1]).unwrap_or(k - 2);
            let h = t[seg + 1] - t[seg];
            let (a, b) = ((t[seg + 1] - x) / h, (x - t[seg]) / h);
            per_dim
                .iter()
                .map(|(y, m)| {
                    a * y[seg] + b * y[seg + 1] + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * h * h / 6.0
                })
                .collect()
        })
        .collect()
}

/// Nearest prototype (Euclidean, lowest index on ties) for every row of `points`.
pub fn assign_nodes(points: &DenseMatrix, prototype_embeddings: &DenseMatrix) -> Vec<usize> {
    (0..points.rows())
        .map(|r| nearest_node(points.row(r), prototype_embeddings, 0..prototype_embeddings.rows()).expect("prototypes"))
        .collect()
}

/// Trajectory from `emb(source)` to `emb(target)`.
///
/// `prototype_embeddings` holds one attribute-space row per graph node. Every state is
/// labelled with its nearest prototype; waypoints keep their own node.
pub fn build_trajectory(
    graph: &GraphPrior,
    prototype_embeddings: &DenseMatrix,
    source: usize,
    target: usize,
    strategy: Strategy,
    steps_per_edge: usize,
    seed: u64,
) -> Result<TrajectoryRecord> {
    check_node(graph, source)?;
    check_node(graph, target)?;
    if prototype_embeddings.rows() != graph.n_nodes() {
        return Err(Error::Dimension(format!(
            "{} prototype embeddings for {} nodes",
            prototype_embeddings.rows(),
            graph.n_nodes()
        )));
    }
    if steps_per_edge == 0 {
        return Err(Error::Config("steps_per_edge must be >= 1".into()));
    }
    let waypoints = match strategy {
        Strategy::Graph | Strategy::Spline => graph_path(graph, source, target)?,
        Strategy::Random => random_simple_path(graph, source, target, seed)?,
        // the fully connected unit-weight graph's shortest path is the direct hop
        Strategy::Linear | Strategy::Full => {
            if source == target {
                vec![source]
            } else {
                vec![source, target]
            }
        }
    };
    let rows = if waypoints.len() == 1 {
        let p = prototype_embeddings.row(source).to_vec();
        vec![p.clone(), p]
    } else if strategy == Strategy::Spline {
        spline(prototype_embeddings, &waypoints, steps_per_edge)
    } else {
        polyline(prototype_embeddings, &waypoints, steps_per_edge)
    };
    let latent_points = DenseMatrix::from_rows(&rows)?;
    let mut node_sequence = assign_nodes(&latent_points, prototype_embeddings);
    let last = node_sequence.len() - 1;
    node_sequence[0] = source;
    node_sequence[last] = target;
    if strategy != Strategy::Spline && waypoints.len() > 1 {
        for (i, &w) in waypoints.iter().enumerate() {
            node_sequence[i * steps_per_edge] = w;
        }
    }
    Ok(TrajectoryRecord {
        latent_points,
        node_sequence,
        waypoints,
        strategy,
        steps_per_edge,
    })
}
