#![allow(dead_code)]

use geomot_core::decoder::ToyDecoder;
use geomot_core::factorization::{FactorHeads, Priors, ProjectionHead, SampleSet};
use geomot_core::graph_priors::{GraphPrior, WeightedGraph};
use geomot_core::numerics::pairwise_distance;
use geomot_core::DenseMatrix;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ring graph with random edge weights plus one random chord.
pub fn ring_prior(n: usize, labels: Vec<String>, rng: &mut ChaCha8Rng) -> GraphPrior {
    let emb = DenseMatrix::from_fn(n, 2, |i, c| {
        let t = std::f64::consts::TAU * i as f64 / n as f64;
        if c == 0 { t.cos() } else { t.sin() }
    });
    let mut w = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let j = (i + 1) % n;
        let v = rng.random_range(0.3..1.0);
        w.set(i, j, v);
        w.set(j, i, v);
    }
    if n > 3 {
        let v = rng.random_range(0.3..1.0);
        w.set(0, n / 2, v);
        w.set(n / 2, 0, v);
    }
    let g = WeightedGraph {
        node_embeddings: emb,
        adjacency_weights: w,
    };
    GraphPrior::from_weighted(g, 1e-6, labels).unwrap()
}

pub struct Fixture {
    pub samples: SampleSet,
    pub heads: FactorHeads,
    pub priors: Priors,
    pub decoder: ToyDecoder,
}

/// Random priors, samples, heads (d → h → p and d → h → q) and a decoder on `p + q`
/// inputs whose operator norm is `decoder_norm`.
pub fn fixture(seed: u64, b: usize, d: usize, h: usize, p: usize, q: usize, decoder_norm: f64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emo_labels: Vec<String> = ["joy", "joy", "calm", "calm", "anger", "anger"].iter().map(|s| s.to_string()).collect();
    let emotion = ring_prior(6, emo_labels, &mut rng);
    let id_labels: Vec<String> = (0..4).map(|g| format!("g{g}")).collect();
    let identity = ring_prior(4, id_labels, &mut rng);
    let emotions = ["joy", "calm", "anger"];
    let samples = SampleSet {
        z: DenseMatrix::from_fn(b, d, |_, _| rng.random_range(-1.0..1.0)),
        va: DenseMatrix::from_fn(b, 2, |_, _| rng.random_range(-1.0..1.0)),
        emotion_labels: (0..b).map(|_| emotions[rng.random_range(0..3)].to_string()).collect(),
        identity_groups: (0..b).map(|_| format!("g{}", rng.random_range(0..4))).collect(),
    };
    let heads = FactorHeads {
        attr: ProjectionHead::init(d, h, p, &mut rng),
        id: ProjectionHead::init(d, h, q, &mut rng),
    };
    let decoder = ToyDecoder::random(p + q, 3, decoder_norm, &mut rng).unwrap();
    Fixture {
        samples,
        heads,
        priors: Priors { emotion, identity },
        decoder,
    }
}

/// Complete graph whose edge lengths are the Euclidean distances between `points`.
pub fn metric_prior(points: &[Vec<f64>], labels: &[&str], eps: f64) -> GraphPrior {
    let n = points.len();
    let emb = DenseMatrix::from_fn(n, points[0].len(), |i, c| points[i][c]);
    let d = pairwise_distance(&emb).unwrap();
    let w = DenseMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 / d.get(i, j) - eps });
    let g = WeightedGraph {
        node_embeddings: emb,
        adjacency_weights: w,
    };
    GraphPrior::from_weighted(g, eps, labels.iter().map(|s| s.to_string()).collect()).unwrap()
}

/// Classical multidimensional scaling via an eigendecomposition of the double-centred
/// squared distances.
pub fn classical_mds(d: &DenseMatrix, dim: usize) -> DenseMatrix {
    let n = d.rows();
    let d2 = DMatrix::from_fn(n, n, |i, j| d.get(i, j) * d.get(i, j));
    let j = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let b = -0.5 * &j * d2 * &j;
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].partial_cmp(&eig.eigenvalues[x]).unwrap());
    DenseMatrix::from_fn(n, dim, |i, c| {
        let k = order[c];
        eig.eigenvectors[(i, k)] * eig.eigenvalues[k].max(0.0).sqrt()
    })
}

pub fn axis(dim: usize, k: usize, sign: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[k] = sign;
    v
}
