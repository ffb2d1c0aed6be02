//! Seeded synthetic data with known factors, and an empirical check of the
//! graph-metric controllability bound for a Lipschitz decoder.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

pub use crate::decoder::ToyDecoder;
use crate::error::{Error, Result};
use crate::factorization::{map_to_nodes, FactorHeads, Priors, ProjectionHead, SampleSet, NORM_FLOOR};
use crate::graph_priors::{build_emotion_graph, build_identity_graph, GraphConfig};
use crate::numerics::{euclidean, normalize_rows, DenseMatrix};
use crate::splitter::{ModalityEmbeddings, SampleRecord};

/// Emotion classes and their valence–arousal anchors (radius 0.8, 45° apart).
pub const EMOTIONS: [&str; 8] = [
    "happiness",
    "surprise",
    "fear",
    "anger",
    "disgust",
    "sadness",
    "contempt",
    "calm",
];

pub fn emotion_anchor(index: usize) -> [f64; 2] {
    let t = std::f64::consts::FRAC_PI_8 + std::f64::consts::FRAC_PI_4 * index as f64;
    [0.8 * t.cos(), 0.8 * t.sin()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    /// Standard deviation of every noise source (VA jitter, identity jitter, encoder noise).
    pub va_noise: f64,
    pub shared_dim: usize,
    pub attr_dim: usize,
    pub id_dim: usize,
    /// Fraction of the identity channel replaced by a projection of the attribute factor.
    pub leakage_strength: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_identities: 16,
            samples_per_identity: 16,
            va_noise: 0.05,
            shared_dim: 16,
            attr_dim: 4,
            id_dim: 4,
            leakage_strength: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities == 0 || self.samples_per_identity == 0 {
            return Err(Error::Config("identity and sample counts must be >= 1".into()));
        }
        if self.shared_dim == 0 || self.attr_dim < 2 || self.id_dim == 0 {
            return Err(Error::Config("shared_dim, id_dim >= 1 and attr_dim >= 2 required".into()));
        }
        if !(self.va_noise >= 0.0 && self.va_noise.is_finite()) {
            return Err(Error::Config("va_noise must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.leakage_strength) {
            return Err(Error::Config("leakage_strength must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.n_identities * self.samples_per_identity
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub samples: SampleSet,
    /// One row per identity group, in `group_ids` order.
    pub identity_centroids: DenseMatrix,
    pub group_ids: Vec<String>,
    pub true_attr: DenseMatrix,
    pub true_id: DenseMatrix,
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| {
        let x: f64 = StandardNormal.sample(rng);
        scale * x
    })
}

/// Gram–Schmidt on the columns of a Gaussian matrix.
fn orthonormal_columns(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    loop {
        let g = gaussian_matrix(rows, cols, 1.0, rng);
        let mut q = DenseMatrix::zeros(rows, cols);
        let mut ok = true;
        for c in 0..cols {
            let mut v: Vec<f64> = (0..rows).map(|r| g.get(r, c)).collect();
            for prev in 0..c {
                let d: f64 = (0..rows).map(|r| q.get(r, prev) * v[r]).sum();
                (0..rows).for_each(|r| v[r] -= d * q.get(r, prev));
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n < 1e-8 {
                ok = false;
                break;
            }
            (0..rows).for_each(|r| q.set(r, c, v[r] / n));
        }
        if ok {
            return q;
        }
    }
}

/// `z = M_a a + M_i i + noise`, with `a` an isometric lift of the VA point and `i` a
/// jittered identity centroid, optionally mixed with `P a`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.va_noise).map_err(|e| Error::Config(e.to_string()))?;
    let lift = orthonormal_columns(spec.attr_dim, 2, &mut rng);
    let leak = gaussian_matrix(spec.id_dim, spec.attr_dim, 1.0 / (spec.attr_dim as f64).sqrt(), &mut rng);
    let m_a = gaussian_matrix(spec.shared_dim, spec.attr_dim, 1.0 / (spec.shared_dim as f64).sqrt(), &mut rng);
    let m_i = gaussian_matrix(spec.shared_dim, spec.id_dim, 1.0 / (spec.shared_dim as f64).sqrt(), &mut rng);
    let centroids = gaussian_matrix(spec.n_identities, spec.id_dim, 1.0 / (spec.id_dim as f64).sqrt(), &mut rng);
    let group_ids: Vec<String> = (0..spec.n_identities).map(|g| format!("id{g:04}")).collect();

    let n = spec.n_samples();
    let mut va = DenseMatrix::zeros(n, 2);
    let mut true_attr = DenseMatrix::zeros(n, spec.attr_dim);
    let mut true_id = DenseMatrix::zeros(n, spec.id_dim);
    let mut z = DenseMatrix::zeros(n, spec.shared_dim);
    let mut emotion_labels = Vec::with_capacity(n);
    let mut identity_groups = Vec::with_capacity(n);
    let classes: Vec<usize> = (0..EMOTIONS.len()).collect();
    let lam = spec.leakage_strength;
    for s in 0..n {
        let g = s / spec.samples_per_identity;
        let e = *classes.choose(&mut rng).expect("non-empty");
        let anchor = emotion_anchor(e);
        for (c, x) in anchor.iter().enumerate() {
            va.set(s, c, x + noise.sample(&mut rng));
        }
        for r in 0..spec.attr_dim {
            true_attr.set(s, r, lift.get(r, 0) * va.get(s, 0) + lift.get(r, 1) * va.get(s, 1));
        }
        for r in 0..spec.id_dim {
            let own = centroids.get(g, r) + noise.sample(&mut rng);
            let mixed: f64 = (0..spec.attr_dim).map(|c| leak.get(r, c) * true_attr.get(s, c)).sum();
            true_id.set(s, r, (1.0 - lam) * own + lam * mixed);
        }
        for r in 0..spec.shared_dim {
            let a: f64 = (0..spec.attr_dim).map(|c| m_a.get(r, c) * true_attr.get(s, c)).sum();
            let i: f64 = (0..spec.id_dim).map(|c| m_i.get(r, c) * true_id.get(s, c)).sum();
            z.set(s, r, a + i + noise.sample(&mut rng));
        }
        emotion_labels.push(EMOTIONS[e].to_string());
        identity_groups.push(group_ids[g].clone());
    }
    Ok(SyntheticData {
        samples: SampleSet {
            z,
            va,
            emotion_labels,
            identity_groups,
        },
        identity_centroids: centroids,
        group_ids,
        true_attr,
        true_id,
    })
}

/// Measured assumption constants and both sides of the expected bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub eps_e: f64,
    pub eps_i: f64,
    pub eps_perp: f64,
    pub l_g: f64,
    /// Mean `‖g(z_u, z_id) − g(z_v, z_id)‖` over the evaluated pairs.
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Mean scaled graph distance `E[D_e(u, v)]` over the same pairs.
    pub mean_graph_distance: f64,
    /// Identity-factor variation during traversal; zero because `z_id` is held fixed.
    pub delta_id: f64,
    pub n_pairs: usize,
    /// Pairs violating `‖Δg‖ ≤ L_g (D_e + η_e + η_i + η_⊥)` with per-pair η.
    pub pointwise_violations: usize,
    /// Smallest pointwise slack (rhs − lhs) over the pairs.
    pub pointwise_min_slack: f64,
}

/// Per-node attribute-factor embeddings: the mean normalised factor of the samples mapped
/// to each node, for nodes that received at least one sample.
struct Embedded {
    nodes: Vec<usize>,
    z_nodes: Vec<Vec<f64>>,
    z_id_fixed: Vec<f64>,
    eps_i: f64,
    eps_perp: f64,
    d_e: DenseMatrix,
}

fn embed(heads: &FactorHeads, batch: &SampleSet, priors: &Priors, target_diameter: f64) -> Result<Embedded> {
    batch.validate()?;
    if batch.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: batch.len(),
        });
    }
    let (emo, _) = map_to_nodes(&batch.va, &batch.emotion_labels, &batch.identity_groups, priors)?;
    let a_hat = normalize_rows(&heads.attr.forward(&batch.z)?, NORM_FLOOR);
    let i_hat = normalize_rows(&heads.id.forward(&batch.z)?, NORM_FLOOR);
    let p = a_hat.cols();

    let mut nodes: Vec<usize> = emo.clone();
    nodes.sort_unstable();
    nodes.dedup();
    let z_nodes: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&u| {
            let members: Vec<usize> = (0..batch.len()).filter(|&s| emo[s] == u).collect();
            let mut m = vec![0.0; p];
            for &s in &members {
                m.iter_mut().zip(a_hat.row(s)).for_each(|(x, y)| *x += y);
            }
            m.iter_mut().for_each(|x| *x /= members.len() as f64);
            m
        })
        .collect();

    // within-group squared identity distances, pooled over all ordered pairs p ≠ q
    let (mut sum, mut count) = (0.0, 0usize);
    for s in 0..batch.len() {
        for t in 0..batch.len() {
            if s != t && batch.identity_groups[s] == batch.identity_groups[t] {
                let d = euclidean(i_hat.row(s), i_hat.row(t));
                sum += d * d;
                count += 1;
            }
        }
    }
    let eps_i = if count > 0 { sum / count as f64 } else { 0.0 };
    let m = a_hat.t_matmul(&i_hat)?;
    let eps_perp = m.as_slice().iter().map(|x| x * x).sum::<f64>() / batch.len() as f64;

    let mut z_id_fixed = vec![0.0; i_hat.cols()];
    for s in 0..batch.len() {
        z_id_fixed.iter_mut().zip(i_hat.row(s)).for_each(|(x, y)| *x += y);
    }
    z_id_fixed.iter_mut().for_each(|x| *x /= batch.len() as f64);

    let d_e = crate::factorization::graph_targets(&priors.emotion, &nodes, target_diameter);
    Ok(Embedded {
        nodes,
        z_nodes,
        z_id_fixed,
        eps_i,
        eps_perp,
        d_e,
    })
}

fn report(emb: &Embedded, decoder: &ToyDecoder, pairs: &[(usize, usize)]) -> Result<BoundReport> {
    let p = emb.z_nodes.first().map_or(0, Vec::len);
    if p + emb.z_id_fixed.len() != decoder.input_dim() {
        return Err(Error::Dimension(format!(
            "decoder expects {} inputs, factors give {}",
            decoder.input_dim(),
            p + emb.z_id_fixed.len()
        )));
    }
    let l_g = decoder.lipschitz_bound();
    let decode = |u: usize| {
        let mut c = emb.z_nodes[u].clone();
        c.extend_from_slice(&emb.z_id_fixed);
        decoder.decode(&c)
    };
    let (mut lhs, mut mean_de, mut sq_err) = (0.0, 0.0, 0.0);
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    for &(u, v) in pairs {
        let out = euclidean(&decode(u), &decode(v));
        let d_e = emb.d_e.get(u, v);
        let d_z = euclidean(&emb.z_nodes[u], &emb.z_nodes[v]);
        let eta_e = (d_z - d_e).abs();
        // z_id is held exactly fixed, so η_i = η_⊥ = 0 for every pair
        let bound = l_g * (d_e + eta_e);
        if out > bound + 1e-9 {
            violations += 1;
        }
        min_slack = min_slack.min(bound - out);
        lhs += out;
        mean_de += d_e;
        sq_err += (d_z - d_e) * (d_z - d_e);
    }
    let n = pairs.len().max(1) as f64;
    let (lhs, mean_de, eps_e) = (lhs / n, mean_de / n, sq_err / n);
    let rhs = l_g * mean_de + l_g * (eps_e.sqrt() + emb.eps_i.sqrt() + emb.eps_perp.sqrt());
    Ok(BoundReport {
        eps_e,
        eps_i: emb.eps_i,
        eps_perp: emb.eps_perp,
        l_g,
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
        mean_graph_distance: mean_de,
        delta_id: 0.0,
        n_pairs: pairs.len(),
        pointwise_violations: violations,
        pointwise_min_slack: if pairs.is_empty() { 0.0 } else { min_slack },
    })
}

/// Assumption constants over every ordered pair of covered prototypes (the exact uniform
/// expectation), with prototype embeddings taken from `batch`.
pub fn measure_assumption_constants(
    heads: &FactorHeads,
    batch: &SampleSet,
    priors: &Priors,
    decoder: &ToyDecoder,
    target_diameter: f64,
) -> Result<BoundReport> {
    let emb = embed(heads, batch, priors, target_diameter)?;
    let k = emb.nodes.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|u| (0..k).map(move |v| (u, v))).collect();
    report(&emb, decoder, &pairs)
}

/// Samples `n_pairs` prototype pairs uniformly (with replacement) and evaluates the bound
/// on exactly those pairs.
pub fn verify_bound(
    heads: &FactorHeads,
    batch: &SampleSet,
    priors: &Priors,
    decoder: &ToyDecoder,
    target_diameter: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<BoundReport> {
    let emb = embed(heads, batch, priors, target_diameter)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = emb.nodes.len();
    let pairs: Vec<(usize, usize)> = (0..n_pairs)
        .map(|_| (rng.random_range(0..k), rng.random_range(0..k)))
        .collect();
    report(&emb, decoder, &pairs)
}

/// Verifies the bound for explicit node pairs (indices into the emotion graph).
pub fn verify_bound_on_pairs(
    heads: &FactorHeads,
    batch: &SampleSet,
    priors: &Priors,
    decoder: &ToyDecoder,
    target_diameter: f64,
    node_pairs: &[(usize, usize)],
) -> Result<BoundReport> {
    let emb = embed(heads, batch, priors, target_diameter)?;
    let local = |u: usize| {
        emb.nodes
            .binary_search(&u)
            .map_err(|_| Error::Mapping(format!("emotion node {u} received no samples")))
    };
    let pairs = node_pairs
        .iter()
        .map(|&(u, v)| Ok((local(u)?, local(v)?)))
        .collect::<Result<Vec<_>>>()?;
    report(&emb, decoder, &pairs)
}

/// Convenience: emotion node indices covered by `batch`.
pub fn covered_nodes(batch: &SampleSet, priors: &Priors) -> Result<Vec<usize>> {
    let (mut emo, _) = map_to_nodes(&batch.va, &batch.emotion_labels, &batch.identity_groups, priors)?;
    emo.sort_unstable();
    emo.dedup();
    Ok(emo)
}

/// Priors built from a synthetic dataset with the given graph configuration.
pub fn build_priors(data: &SyntheticData, cfg: &GraphConfig, seed: u64) -> Result<Priors> {
    let emotion = build_emotion_graph(&data.samples.va, &data.samples.emotion_labels, cfg, seed)?;
    let identity = build_identity_graph(&data.identity_centroids, &data.group_ids, cfg)?;
    Ok(Priors { emotion, identity })
}

/// Sizes of the heads and decoder trained on the synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub hidden_dim: usize,
    pub attr_dim: usize,
    pub id_dim: usize,
    pub decoder_output_dim: usize,
    pub decoder_lipschitz: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            attr_dim: 8,
            id_dim: 8,
            decoder_output_dim: 8,
            decoder_lipschitz: 1.0,
        }
    }
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.attr_dim == 0 || self.id_dim == 0 || self.decoder_output_dim == 0 {
            return Err(Error::Config("model dimensions must be >= 1".into()));
        }
        if !(self.decoder_lipschitz > 0.0 && self.decoder_lipschitz.is_finite()) {
            return Err(Error::Config("decoder_lipschitz must be positive".into()));
        }
        Ok(())
    }
}

const MODEL_STREAM: u64 = 7;

/// Freshly initialised heads for `input_dim`-dimensional inputs and a random decoder on
/// `[z_attr; z_id]` whose operator norm equals the declared bound.
pub fn init_model(input_dim: usize, shape: &ModelShape, seed: u64) -> Result<(FactorHeads, ToyDecoder)> {
    shape.validate()?;
    if input_dim == 0 {
        return Err(Error::Config("input_dim must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MODEL_STREAM);
    let heads = FactorHeads {
        attr: ProjectionHead::init(input_dim, shape.hidden_dim, shape.attr_dim, &mut rng),
        id: ProjectionHead::init(input_dim, shape.hidden_dim, shape.id_dim, &mut rng),
    };
    let decoder = ToyDecoder::random(
        shape.attr_dim + shape.id_dim,
        shape.decoder_output_dim,
        shape.decoder_lipschitz,
        &mut rng,
    )?;
    Ok((heads, decoder))
}

const RECORD_STREAM: u64 = 11;

/// Splitter records for the generated samples: the image embedding is `z` itself and the
/// text and audio embeddings are `z` plus independent Gaussian noise of std
/// `modality_noise`. Ids are `s00000`, `s00001`, ... in sample order.
pub fn sample_records(data: &SyntheticData, modality_noise: f64, seed: u64) -> Result<Vec<SampleRecord>> {
    if !(modality_noise >= 0.0 && modality_noise.is_finite()) {
        return Err(Error::Config(format!("modality_noise must be >= 0, got {modality_noise}")));
    }
    let noise = Normal::new(0.0, modality_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(RECORD_STREAM);
    let s = &data.samples;
    Ok((0..s.len())
        .map(|i| {
            let img = s.z.row(i).to_vec();
            let mut jitter = |v: &[f64]| v.iter().map(|x| x + noise.sample(&mut rng)).collect::<Vec<f64>>();
            let text = jitter(&img);
            let aud = jitter(&img);
            SampleRecord {
                sample_id: format!("s{i:05}"),
                group_id: s.identity_groups[i].clone(),
                emotion_label: s.emotion_labels[i].clone(),
                modality_embeddings: ModalityEmbeddings { img, text, aud },
                source_tag: "synthetic".into(),
            }
        })
        .collect())
}
