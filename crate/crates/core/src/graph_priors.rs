//! Emotion and identity graph priors.
//!
//! A prior is built in three steps: optional k-means clustering of raw points into
//! prototype nodes, a cosine kNN graph over the nodes, and all-pairs shortest paths
//! over edge lengths `1 / (w + eps)`. The resulting distance matrix is the target
//! geometry for one latent factor.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, euclidean, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub k_neighbors: usize,
    pub n_prototypes: usize,
    pub epsilon_length: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 10,
            n_prototypes: 32,
            epsilon_length: 1e-6,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors < 1 {
            return Err(Error::Config("k_neighbors must be >= 1".into()));
        }
        if self.n_prototypes < 2 {
            return Err(Error::Config("n_prototypes must be >= 2".into()));
        }
        if !(self.epsilon_length >= 0.0 && self.epsilon_length.is_finite()) {
            return Err(Error::Config("epsilon_length must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Node embeddings plus symmetric edge weights in `[0, 1]` (0 means no edge).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    pub node_embeddings: DenseMatrix,
    pub adjacency_weights: DenseMatrix,
}

impl WeightedGraph {
    pub fn n_nodes(&self) -> usize {
        self.adjacency_weights.rows()
    }

    /// Neighbours of `i` in ascending index order.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adjacency_weights
            .row(i)
            .iter()
            .enumerate()
            .filter(move |&(j, &w)| j != i && w > 0.0)
            .map(|(j, &w)| (j, w))
    }

    pub fn n_edges(&self) -> usize {
        let n = self.n_nodes();
        let mut count = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency_weights.get(i, j) > 0.0 {
                    count += 1;
                }
            }
        }
        count
    }

    /// Number of connected components.
    pub fn components(&self) -> usize {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        let mut count = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for (u, _) in self.neighbors(v) {
                    if !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
        count
    }
}

/// A graph prior: nodes, edge weights and the shortest-path distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPrior {
    pub node_embeddings: DenseMatrix,
    pub adjacency_weights: DenseMatrix,
    pub distance_matrix: DenseMatrix,
    /// Per-node label: majority emotion for emotion prototypes, group id for identity nodes.
    pub labels: Vec<String>,
    pub epsilon_length: f64,
}

impl GraphPrior {
    pub fn from_weighted(graph: WeightedGraph, epsilon_length: f64, labels: Vec<String>) -> Result<Self> {
        if labels.len() != graph.n_nodes() {
            return Err(Error::Dimension(format!(
                "{} labels for {} nodes",
                labels.len(),
                graph.n_nodes()
            )));
        }
        let distance_matrix = shortest_path_matrix(&graph, epsilon_length)?;
        Ok(Self {
            node_embeddings: graph.node_embeddings,
            adjacency_weights: graph.adjacency_weights,
            distance_matrix,
            labels,
            epsilon_length,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.distance_matrix.rows()
    }

    pub fn weighted(&self) -> WeightedGraph {
        WeightedGraph {
            node_embeddings: self.node_embeddings.clone(),
            adjacency_weights: self.adjacency_weights.clone(),
        }
    }

    /// Largest shortest-path distance.
    pub fn diameter(&self) -> f64 {
        self.distance_matrix.max_abs()
    }

    pub fn edge_length(&self, i: usize, j: usize) -> Option<f64> {
        let w = self.adjacency_weights.get(i, j);
        (i != j && w > 0.0).then(|| 1.0 / (w + self.epsilon_length))
    }

    /// First node carrying `label`.
    pub fn node_for_label(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn nodes_with_label<'a>(&'a self, label: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, l)| l.as_str() == label)
            .map(|(i, _)| i)
    }

    pub fn to_file(&self) -> GraphFile {
        let n = self.n_nodes();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = self.adjacency_weights.get(i, j);
                if w > 0.0 {
                    edges.push((i, j, w));
                }
            }
        }
        GraphFile {
            nodes: self.node_embeddings.to_nested(),
            edges,
            distance_matrix: self.distance_matrix.to_nested(),
            labels: self.labels.clone(),
            epsilon_length: self.epsilon_length,
        }
    }

    pub fn from_file(file: GraphFile) -> Result<Self> {
        let node_embeddings = DenseMatrix::from_rows(&file.nodes)?;
        let n = node_embeddings.rows();
        let mut adjacency_weights = DenseMatrix::zeros(n, n);
        for &(i, j, w) in &file.edges {
            if i >= n || j >= n || i == j {
                return Err(Error::Validation(format!("bad edge ({i}, {j})")));
            }
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Validation(format!("edge weight {w} outside [0, 1]")));
            }
            adjacency_weights.set(i, j, w);
            adjacency_weights.set(j, i, w);
        }
        let distance_matrix = DenseMatrix::from_rows(&file.distance_matrix)?;
        if distance_matrix.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "distance matrix is {:?}, expected {n}x{n}",
                distance_matrix.shape()
            )));
        }
        if !distance_matrix.is_symmetric(1e-9) {
            return Err(Error::Validation("distance matrix is not symmetric".into()));
        }
        if file.labels.len() != n {
            return Err(Error::Dimension(format!(
                "{} labels for {n} nodes",
                file.labels.len()
            )));
        }
        Ok(Self {
            node_embeddings,
            adjacency_weights,
            distance_matrix,
            labels: file.labels,
            epsilon_length: file.epsilon_length,
        })
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.to_file())?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let file: GraphFile = serde_json::from_reader(r)?;
        Self::from_file(file)
    }
}

/// On-disk form of a [`GraphPrior`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: Vec<Vec<f64>>,
    pub edges: Vec<(usize, usize, f64)>,
    pub distance_matrix: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    #[serde(default = "default_epsilon_length")]
    pub epsilon_length: f64,
}

fn default_epsilon_length() -> f64 {
    GraphConfig::default().epsilon_length
}

/// Result of [`kmeans`]: centroids and the cluster index of every input point.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: DenseMatrix,
    pub assignment: Vec<usize>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(point: &[f64], centroids: &DenseMatrix) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (c, row) in centroids.row_iter().enumerate() {
        let d = sq_dist(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means with k-means++ seeding. Deterministic for a fixed seed.
pub fn kmeans(points: &DenseMatrix, n_clusters: usize, seed: u64) -> Result<Clustering> {
    let m = points.rows();
    if n_clusters == 0 {
        return Err(Error::Config("n_clusters must be >= 1".into()));
    }
    if m < n_clusters {
        return Err(Error::InsufficientSamples {
            needed: n_clusters,
            got: m,
        });
    }
    let dim = points.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen = Vec::with_capacity(n_clusters);
    chosen.push(rng.random_range(0..m));
    let mut min_d: Vec<f64> = (0..m)
        .map(|i| sq_dist(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < n_clusters {
        let total: f64 = min_d.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in min_d.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if target < d {
                    pick = Some(i);
                    break;
                }
                target -= d;
            }
            pick.unwrap_or_else(|| min_d.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            // every remaining point coincides with a chosen centre
            let free: Vec<usize> = (0..m).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in min_d.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    let mut centroids = points.select_rows(&chosen);

    let mut assignment = vec![usize::MAX; m];
    for _ in 0..300 {
        let mut changed = false;
        for i in 0..m {
            let (c, _) = nearest_centroid(points.row(i), &centroids);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        fill_empty_clusters(points, &mut centroids, &mut assignment, n_clusters);

        let mut sums = DenseMatrix::zeros(n_clusters, dim);
        let mut counts = vec![0usize; n_clusters];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..n_clusters {
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(Clustering {
        centroids,
        assignment,
    })
}

/// Moves the point farthest from its centroid (taken from a cluster with >1 members)
/// into each empty cluster.
fn fill_empty_clusters(
    points: &DenseMatrix,
    centroids: &mut DenseMatrix,
    assignment: &mut [usize],
    n_clusters: usize,
) {
    loop {
        let mut counts = vec![0usize; n_clusters];
        for &c in assignment.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, &c) in assignment.iter().enumerate() {
            if counts[c] < 2 {
                continue;
            }
            let d = sq_dist(points.row(i), centroids.row(c));
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("m >= n_clusters guarantees a donor cluster");
        assignment[i] = empty;
        centroids.row_mut(empty).copy_from_slice(points.row(i));
    }
}

/// k-means centroids of `points`.
pub fn cluster_prototypes(points: &DenseMatrix, n_prototypes: usize, seed: u64) -> Result<DenseMatrix> {
    Ok(kmeans(points, n_prototypes, seed)?.centroids)
}

/// Connects every node to its `min(k, N-1)` most cosine-similar nodes.
///
/// Directed weights are the cosine similarity clamped to `[0, 1]`; a non-positive
/// similarity drops the edge. The graph is symmetrised with the max of both directions.
pub fn build_knn_graph(nodes: &DenseMatrix, cfg: &GraphConfig) -> Result<WeightedGraph> {
    cfg.validate()?;
    let n = nodes.rows();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let sim = cosine_similarity(nodes)?;
    let k_eff = cfg.k_neighbors.min(n - 1);
    let mut adjacency = DenseMatrix::zeros(n, n);
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        order.sort_by(|&a, &b| {
            sim.get(i, b)
                .partial_cmp(&sim.get(i, a))
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(k_eff) {
            let w = sim.get(i, j).clamp(0.0, 1.0);
            if w <= 0.0 {
                continue;
            }
            let sym = w.max(adjacency.get(i, j));
            adjacency.set(i, j, sym);
            adjacency.set(j, i, sym);
        }
    }
    let graph = WeightedGraph {
        node_embeddings: nodes.clone(),
        adjacency_weights: adjacency,
    };
    let components = graph.components();
    if components > 1 {
        return Err(Error::Disconnected { components });
    }
    Ok(graph)
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All-pairs shortest paths over edge lengths `1 / (w + epsilon_length)` (Dijkstra per source).
pub fn shortest_path_matrix(graph: &WeightedGraph, epsilon_length: f64) -> Result<DenseMatrix> {
    let n = graph.n_nodes();
    if graph.adjacency_weights.cols() != n {
        return Err(Error::Dimension("adjacency matrix must be square".into()));
    }
    let adjacency: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            graph
                .neighbors(i)
                .map(|(j, w)| (j, 1.0 / (w + epsilon_length)))
                .collect()
        })
        .collect();
    let mut out = DenseMatrix::zeros(n, n);
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for source in 0..n {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        dist[source] = 0.0;
        heap.push(HeapItem {
            dist: 0.0,
            node: source,
        });
        while let Some(HeapItem { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for &(next, len) in &adjacency[node] {
                let nd = d + len;
                if nd < dist[next] {
                    dist[next] = nd;
                    heap.push(HeapItem {
                        dist: nd,
                        node: next,
                    });
                }
            }
        }
        if dist.iter().any(|d| !d.is_finite()) {
            return Err(Error::Disconnected {
                components: graph.components(),
            });
        }
        out.row_mut(source).copy_from_slice(&dist);
    }
    // Dijkstra from i and from j can disagree in the last ulp; average to keep exact symmetry.
    for i in 0..n {
        for j in (i + 1)..n {
            let d = 0.5 * (out.get(i, j) + out.get(j, i));
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    Ok(out)
}

fn majority_label<'a>(labels: impl Iterator<Item = &'a str>) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    // BTreeMap iterates in label order, so ties go to the smallest label.
    let mut best: Option<(&str, usize)> = None;
    for (l, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((l, c));
        }
    }
    best.map(|(l, _)| l.to_string())
}

/// Emotion graph over k-means prototypes of valence–arousal points.
///
/// Every prototype carries the majority emotion label of its cluster.
pub fn build_emotion_graph(
    va_points: &DenseMatrix,
    labels: &[String],
    cfg: &GraphConfig,
    seed: u64,
) -> Result<GraphPrior> {
    cfg.validate()?;
    if labels.len() != va_points.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} points",
            labels.len(),
            va_points.rows()
        )));
    }
    let clustering = kmeans(va_points, cfg.n_prototypes, seed)?;
    let node_labels = (0..cfg.n_prototypes)
        .map(|c| {
            majority_label(
                clustering
                    .assignment
                    .iter()
                    .zip(labels)
                    .filter(|(&a, _)| a == c)
                    .map(|(_, l)| l.as_str()),
            )
            .expect("every cluster is non-empty")
        })
        .collect();
    let graph = build_knn_graph(&clustering.centroids, cfg)?;
    GraphPrior::from_weighted(graph, cfg.epsilon_length, node_labels)
}

/// Identity graph with one node per reference-identity group.
pub fn build_identity_graph(
    identity_centroids: &DenseMatrix,
    group_ids: &[String],
    cfg: &GraphConfig,
) -> Result<GraphPrior> {
    if group_ids.len() != identity_centroids.rows() {
        return Err(Error::Dimension(format!(
            "{} group ids for {} centroids",
            group_ids.len(),
            identity_centroids.rows()
        )));
    }
    let graph = build_knn_graph(identity_centroids, cfg)?;
    GraphPrior::from_weighted(graph, cfg.epsilon_length, group_ids.to_vec())
}

/// Nearest node (Euclidean) among `candidates`, lowest index on ties.
pub fn nearest_node(point: &[f64], embeddings: &DenseMatrix, candidates: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for c in candidates {
        let d = euclidean(point, embeddings.row(c));
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((c, d));
        }
    }
    best.map(|(c, _)| c)
}
