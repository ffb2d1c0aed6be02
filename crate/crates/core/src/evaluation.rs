//! Model-level evaluation: attribute-space prototypes, traversal sweeps and the
//! aggregated metrics report.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::decoder::ToyDecoder;
use crate::factorization::{
    train, FactorHeads, LatentBatch, LossBreakdown, LossConfig, Priors, SampleSet, TrainConfig, NORM_FLOOR,
};
use crate::graph_priors::{nearest_node, GraphPrior};
use crate::metrics::{
    emotion_accuracy, geodesic_consistency, identity_similarity, latent_disentanglement_score,
    trajectory_smoothness, verification_auc, MetricsReport,
};
use crate::numerics::{cosine, normalize_rows, DenseMatrix};
use crate::traversal::{build_trajectory, graph_path, Strategy, TrajectoryRecord, DEFAULT_STEPS_PER_EDGE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub strategies: Vec<Strategy>,
    /// Upper bound on endpoint pairs; all qualifying pairs are used when fewer exist.
    pub max_pairs: usize,
    /// Minimum number of edges on the shortest path between endpoints.
    pub min_hops: usize,
    pub steps_per_edge: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            max_pairs: 64,
            min_hops: 2,
            steps_per_edge: DEFAULT_STEPS_PER_EDGE,
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one traversal strategy is required".into()));
        }
        if self.max_pairs == 0 || self.steps_per_edge == 0 {
            return Err(Error::Config("max_pairs and steps_per_edge must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub mean_gc: f64,
    pub mean_ts: f64,
    pub n_trajectories: usize,
    /// Trajectories left out of the GC mean because neither graph nor latent moved.
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    /// `ts` and `gc` are those of the graph strategy, or of the first strategy swept
    /// when graph is absent.
    pub metrics: MetricsReport,
    pub strategies: Vec<StrategySummary>,
    pub pairs: Vec<(usize, usize)>,
    pub trajectories: Vec<TrajectoryRecord>,
}

/// One attribute-space embedding per emotion node: the mean normalised attribute factor
/// of the samples mapped to it. A node no sample maps to borrows the factor of the sample
/// nearest to it in valence–arousal space.
pub fn prototype_embeddings(heads: &FactorHeads, samples: &SampleSet, priors: &Priors) -> Result<DenseMatrix> {
    samples.validate()?;
    let a_hat = normalize_rows(&heads.attr.forward(&samples.z)?, NORM_FLOOR);
    attribute_prototypes(&a_hat, &samples.va, &samples.emotion_labels, &priors.emotion)
}

/// [`prototype_embeddings`] from already-normalised attribute factors `a_hat`.
pub fn attribute_prototypes(
    a_hat: &DenseMatrix,
    va: &DenseMatrix,
    emotion_labels: &[String],
    emotion: &GraphPrior,
) -> Result<DenseMatrix> {
    let b = a_hat.rows();
    if b == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if va.rows() != b || emotion_labels.len() != b {
        return Err(Error::Dimension(format!(
            "{b} factors, {} va rows, {} labels",
            va.rows(),
            emotion_labels.len()
        )));
    }
    let n = emotion.n_nodes();
    let p = a_hat.cols();
    let mut out = DenseMatrix::zeros(n, p);
    let mut counts = vec![0usize; n];
    for (s, label) in emotion_labels.iter().enumerate() {
        let u = nearest_node(va.row(s), &emotion.node_embeddings, emotion.nodes_with_label(label))
            .ok_or_else(|| Error::Mapping(format!("emotion label {label:?}")))?;
        counts[u] += 1;
        out.row_mut(u).iter_mut().zip(a_hat.row(s)).for_each(|(x, y)| *x += y);
    }
    for u in 0..n {
        if counts[u] > 0 {
            let c = counts[u] as f64;
            out.row_mut(u).iter_mut().for_each(|x| *x /= c);
        } else {
            let anchor = emotion.node_embeddings.row(u);
            let s = nearest_node(anchor, va, 0..b).expect("non-empty samples");
            out.row_mut(u).copy_from_slice(a_hat.row(s));
        }
    }
    Ok(out)
}

/// Seeded sample of ordered endpoint pairs whose shortest path has at least `min_hops`
/// edges, listed in a deterministic order.
pub fn endpoint_pairs(graph: &GraphPrior, min_hops: usize, max_pairs: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let n = graph.n_nodes();
    let mut pairs = Vec::new();
    for s in 0..n {
        for t in 0..n {
            if s != t && graph_path(graph, s, t)?.len() > min_hops {
                pairs.push((s, t));
            }
        }
    }
    if pairs.len() > max_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pairs.shuffle(&mut rng);
        pairs.truncate(max_pairs);
        pairs.sort_unstable();
    }
    Ok(pairs)
}

/// Builds every (pair, strategy) trajectory and summarises GC and TS per strategy.
pub fn sweep(
    graph: &GraphPrior,
    prototypes: &DenseMatrix,
    pairs: &[(usize, usize)],
    cfg: &SweepConfig,
) -> Result<(Vec<TrajectoryRecord>, Vec<StrategySummary>)> {
    cfg.validate()?;
    let mut trajectories = Vec::with_capacity(pairs.len() * cfg.strategies.len());
    let mut summaries = Vec::with_capacity(cfg.strategies.len());
    for &strategy in &cfg.strategies {
        let mut built = Vec::with_capacity(pairs.len());
        for (k, &(s, t)) in pairs.iter().enumerate() {
            // direct strategies get as many states as the shortest path
            let steps = match strategy {
                Strategy::Linear | Strategy::Full => cfg.steps_per_edge * (graph_path(graph, s, t)?.len() - 1).max(1),
                _ => cfg.steps_per_edge,
            };
            built.push(build_trajectory(graph, prototypes, s, t, strategy, steps, cfg.seed.wrapping_add(k as u64))?);
        }
        summaries.push(summarize_trajectories(strategy, &built, graph)?);
        trajectories.extend(built);
    }
    Ok((trajectories, summaries))
}

/// Mean GC and TS over the trajectories GC does not exclude. With none left, GC is 0
/// and TS 1.
pub fn summarize_trajectories(
    strategy: Strategy,
    trajectories: &[TrajectoryRecord],
    graph: &GraphPrior,
) -> Result<StrategySummary> {
    let (mut gc_sum, mut ts_sum, mut used, mut excluded) = (0.0, 0.0, 0usize, 0usize);
    for traj in trajectories {
        let gc = geodesic_consistency(traj, graph)?;
        if gc.excluded {
            excluded += 1;
        } else {
            gc_sum += gc.gc;
            ts_sum += trajectory_smoothness(traj)?;
            used += 1;
        }
    }
    Ok(StrategySummary {
        strategy,
        mean_gc: if used > 0 { gc_sum / used as f64 } else { 0.0 },
        mean_ts: if used > 0 { ts_sum / used as f64 } else { 1.0 },
        n_trajectories: trajectories.len(),
        n_excluded: excluded,
    })
}

/// Scores computed from the factors alone, without traversal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorScores {
    pub acc: f64,
    pub id_sim: f64,
    pub auc: f64,
    pub lds: f64,
}

/// Emotion accuracy (nearest attribute prototype), identity similarity to the group
/// mean, same-versus-different-group verification AUC and LDS, all on normalised
/// factors. Returns the prototypes alongside.
pub fn factor_scores(latent: &LatentBatch, emotion: &GraphPrior) -> Result<(FactorScores, DenseMatrix)> {
    latent.validate()?;
    let a_hat = normalize_rows(&latent.z_attr, NORM_FLOOR);
    let i_hat = normalize_rows(&latent.z_id, NORM_FLOOR);
    let prototypes = attribute_prototypes(&a_hat, &latent.va, &latent.emotion_labels, emotion)?;
    let b = latent.len();

    let predicted: Vec<&str> = (0..b)
        .map(|s| {
            let u = nearest_node(a_hat.row(s), &prototypes, 0..prototypes.rows()).expect("prototypes");
            emotion.labels[u].as_str()
        })
        .collect();
    let truth: Vec<&str> = latent.emotion_labels.iter().map(String::as_str).collect();
    let acc = emotion_accuracy(&predicted, &truth)?;

    let mut groups: Vec<&str> = latent.identity_groups.iter().map(String::as_str).collect();
    groups.sort_unstable();
    groups.dedup();
    let q = i_hat.cols();
    let mut centroids = DenseMatrix::zeros(groups.len(), q);
    let mut counts = vec![0usize; groups.len()];
    let group_of: Vec<usize> = latent
        .identity_groups
        .iter()
        .map(|g| groups.binary_search(&g.as_str()).expect("group listed"))
        .collect();
    for (s, &g) in group_of.iter().enumerate() {
        counts[g] += 1;
        centroids.row_mut(g).iter_mut().zip(i_hat.row(s)).for_each(|(x, y)| *x += y);
    }
    for (g, &c) in counts.iter().enumerate() {
        centroids.row_mut(g).iter_mut().for_each(|x| *x /= c as f64);
    }
    let reference = centroids.select_rows(&group_of);
    let id_sim = identity_similarity(&i_hat, &reference)?;

    let (mut matched, mut nonmatched) = (Vec::new(), Vec::new());
    for s in 0..b {
        for t in s + 1..b {
            let score = cosine(i_hat.row(s), i_hat.row(t))?;
            if group_of[s] == group_of[t] {
                matched.push(score);
            } else {
                nonmatched.push(score);
            }
        }
    }
    let auc = verification_auc(&matched, &nonmatched)?;
    let lds = latent_disentanglement_score(&a_hat, &i_hat)?;
    Ok((FactorScores { acc, id_sim, auc, lds }, prototypes))
}

/// Emotion accuracy (nearest attribute prototype), identity similarity to the group
/// mean, same-versus-different-group verification AUC, LDS on normalised factors, and
/// TS/GC from a traversal sweep over the emotion graph.
pub fn evaluate_model(
    heads: &FactorHeads,
    samples: &SampleSet,
    priors: &Priors,
    cfg: &SweepConfig,
) -> Result<ModelEvaluation> {
    cfg.validate()?;
    let latent = LatentBatch::encode(samples, heads)?;
    let (scores, prototypes) = factor_scores(&latent, &priors.emotion)?;
    let pairs = endpoint_pairs(&priors.emotion, cfg.min_hops, cfg.max_pairs, cfg.seed)?;
    let (trajectories, strategies) = sweep(&priors.emotion, &prototypes, &pairs, cfg)?;
    let headline = strategies
        .iter()
        .find(|s| s.strategy == Strategy::Graph)
        .unwrap_or(&strategies[0]);
    let metrics = MetricsReport {
        acc: scores.acc,
        id_sim: scores.id_sim,
        auc: scores.auc,
        ts: headline.mean_ts,
        lds: scores.lds,
        gc: headline.mean_gc,
    };
    Ok(ModelEvaluation {
        metrics,
        strategies,
        pairs,
        trajectories,
    })
}

/// One trained variant of an ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub name: String,
    pub lambda_e: f64,
    pub lambda_i: f64,
    pub lambda_perp: f64,
    pub metrics: MetricsReport,
    pub final_loss: LossBreakdown,
}

/// Full objective against the graph-free (`λ_e = λ_i = 0`) and decoupling-free
/// (`λ_⊥ = 0`) variants, all trained from the same initial heads with the same seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    pub gc_below_no_graph: bool,
    pub gc_below_no_perp: bool,
    pub lds_above_no_graph: bool,
    pub lds_above_no_perp: bool,
}

impl AblationReport {
    pub fn run(&self, name: &str) -> Option<&AblationRun> {
        self.runs.iter().find(|r| r.name == name)
    }

    /// Every expected direction holds strictly.
    pub fn directions_hold(&self) -> bool {
        self.gc_below_no_graph && self.gc_below_no_perp && self.lds_above_no_graph && self.lds_above_no_perp
    }
}

pub fn run_ablation(
    samples: &SampleSet,
    heads: &FactorHeads,
    priors: &Priors,
    decoder: &ToyDecoder,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    sweep_cfg: &SweepConfig,
) -> Result<AblationReport> {
    let variants = [
        ("full", loss_cfg.lambda_e, loss_cfg.lambda_i, loss_cfg.lambda_perp),
        ("no_graph", 0.0, 0.0, loss_cfg.lambda_perp),
        ("no_perp", loss_cfg.lambda_e, loss_cfg.lambda_i, 0.0),
    ];
    let runs = variants
        .iter()
        .map(|&(name, lambda_e, lambda_i, lambda_perp)| {
            let cfg = LossConfig {
                lambda_e,
                lambda_i,
                lambda_perp,
                ..*loss_cfg
            };
            let out = train(samples, heads, priors, decoder, &cfg, train_cfg)?;
            let eval = evaluate_model(&out.heads, samples, priors, sweep_cfg)?;
            Ok(AblationRun {
                name: name.to_string(),
                lambda_e,
                lambda_i,
                lambda_perp,
                metrics: eval.metrics,
                final_loss: out.final_eval,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (full, no_graph, no_perp) = (&runs[0].metrics, &runs[1].metrics, &runs[2].metrics);
    Ok(AblationReport {
        gc_below_no_graph: full.gc < no_graph.gc,
        gc_below_no_perp: full.gc < no_perp.gc,
        lds_above_no_graph: full.lds > no_graph.lds,
        lds_above_no_perp: full.lds > no_perp.lds,
        runs,
    })
}
