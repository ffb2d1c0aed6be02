//! Evaluation metrics: emotion accuracy, identity similarity, verification AUC,
//! trajectory smoothness, latent disentanglement and geodesic consistency.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_priors::GraphPrior;
use crate::numerics::{centered_cross_covariance, cosine, euclidean, frobenius_norm, DenseMatrix};
use crate::traversal::{assign_nodes, TrajectoryRecord};

/// Stabiliser in the TS, LDS and GC denominators.
pub const METRIC_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub id_sim: f64,
    pub auc: f64,
    pub ts: f64,
    pub lds: f64,
    pub gc: f64,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(in_unit(self.acc)
            && (-1.0..=1.0).contains(&self.id_sim)
            && in_unit(self.auc)
            && in_unit(self.ts)
            && in_unit(self.lds)
            && self.gc >= 0.0
            && self.gc.is_finite())
        {
            return Err(Error::Validation(format!("metric out of range: {self:?}")));
        }
        Ok(())
    }
}

pub fn emotion_accuracy<S: AsRef<str>>(predicted: &[S], target: &[S]) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} targets",
            predicted.len(),
            target.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let hits = predicted.iter().zip(target).filter(|(p, t)| p.as_ref() == t.as_ref()).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Mean row-wise cosine similarity.
pub fn identity_similarity(generated: &DenseMatrix, reference: &DenseMatrix) -> Result<f64> {
    if generated.shape() != reference.shape() {
        return Err(Error::Dimension(format!(
            "{:?} vs {:?}",
            generated.shape(),
            reference.shape()
        )));
    }
    if generated.rows() == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let total = (0..generated.rows())
        .map(|r| cosine(generated.row(r), reference.row(r)))
        .sum::<Result<f64>>()?;
    Ok(total / generated.rows() as f64)
}

/// Mann–Whitney form of the ROC AUC; ties count one half.
pub fn verification_auc(matched: &[f64], nonmatched: &[f64]) -> Result<f64> {
    if matched.is_empty() || nonmatched.is_empty() {
        return Err(Error::InsufficientSamples {
            needed: 1,
            got: 0,
        });
    }
    let mut wins = 0.0;
    for &m in matched {
        for &n in nonmatched {
            if m > n {
                wins += 1.0;
            } else if m == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (matched.len() * nonmatched.len()) as f64)
}

fn step_lengths(points: &DenseMatrix) -> Vec<f64> {
    (1..points.rows())
        .map(|t| euclidean(points.row(t), points.row(t - 1)))
        .collect()
}

/// `1 − mean_t ‖Δ²z_t‖ / (path length + ε)` before clamping; may be negative for sharp
/// reversals.
pub fn trajectory_smoothness_unclamped(traj: &TrajectoryRecord) -> Result<f64> {
    let z = &traj.latent_points;
    if z.rows() < 3 {
        return Ok(1.0);
    }
    let length: f64 = step_lengths(z).iter().sum();
    if length == 0.0 {
        return Err(Error::Degenerate("trajectory has zero length".into()));
    }
    let interior = z.rows() - 2;
    let curvature: f64 = (1..=interior)
        .map(|t| {
            z.row(t + 1)
                .iter()
                .zip(z.row(t))
                .zip(z.row(t - 1))
                .map(|((a, b), c)| (a - 2.0 * b + c).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(1.0 - curvature / interior as f64 / (length + METRIC_EPS))
}

/// Trajectory smoothness clamped to `[0, 1]`; trajectories with fewer than three
/// states score 1.
pub fn trajectory_smoothness(traj: &TrajectoryRecord) -> Result<f64> {
    Ok(trajectory_smoothness_unclamped(traj)?.clamp(0.0, 1.0))
}

/// `1 − clip(‖Cov(A,I)‖ / (‖Cov(A,I)‖ + ‖Cov(A)‖ + ‖Cov(I)‖ + ε), 0, 1)`.
pub fn latent_disentanglement_score(z_attr: &DenseMatrix, z_id: &DenseMatrix) -> Result<f64> {
    if z_attr.rows() != z_id.rows() {
        return Err(Error::Dimension(format!(
            "batch sizes differ: {} vs {}",
            z_attr.rows(),
            z_id.rows()
        )));
    }
    let cross = frobenius_norm(&centered_cross_covariance(z_attr, z_id)?);
    let ca = frobenius_norm(&centered_cross_covariance(z_attr, z_attr)?);
    let ci = frobenius_norm(&centered_cross_covariance(z_id, z_id)?);
    Ok(1.0 - (cross / (cross + ca + ci + METRIC_EPS)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicConsistency {
    pub gc: f64,
    /// Set when both the graph and the latent trajectory make no progress; `gc` is then 0
    /// and the trajectory should be left out of averages.
    pub excluded: bool,
}

/// Mean absolute gap between normalised per-step graph progress and latent progress,
/// using the trajectory's own node sequence.
pub fn geodesic_consistency(traj: &TrajectoryRecord, graph: &GraphPrior) -> Result<GeodesicConsistency> {
    if traj.node_sequence.is_empty() {
        return Err(Error::Validation("trajectory has no node sequence".into()));
    }
    gc_with_nodes(&traj.latent_points, &traj.node_sequence, graph)
}

/// As [`geodesic_consistency`], re-assigning every state to its nearest prototype.
pub fn geodesic_consistency_assigned(
    traj: &TrajectoryRecord,
    graph: &GraphPrior,
    prototype_embeddings: &DenseMatrix,
) -> Result<GeodesicConsistency> {
    let nodes = assign_nodes(&traj.latent_points, prototype_embeddings);
    gc_with_nodes(&traj.latent_points, &nodes, graph)
}

fn gc_with_nodes(points: &DenseMatrix, nodes: &[usize], graph: &GraphPrior) -> Result<GeodesicConsistency> {
    if points.rows() < 2 {
        return Err(Error::Validation("trajectory needs at least one step".into()));
    }
    if nodes.len() != points.rows() {
        return Err(Error::Dimension(format!("{} nodes for {} states", nodes.len(), points.rows())));
    }
    if let Some(&u) = nodes.iter().find(|&&u| u >= graph.n_nodes()) {
        return Err(Error::UnknownNode(u));
    }
    let graph_steps: Vec<f64> = nodes.windows(2).map(|w| graph.distance_matrix.get(w[0], w[1])).collect();
    let latent_steps = step_lengths(points);
    let g_total: f64 = graph_steps.iter().sum();
    let l_total: f64 = latent_steps.iter().sum();
    if g_total == 0.0 && l_total == 0.0 {
        return Ok(GeodesicConsistency { gc: 0.0, excluded: true });
    }
    let t = graph_steps.len() as f64;
    let gc = graph_steps
        .iter()
        .zip(&latent_steps)
        .map(|(g, l)| (g / (g_total + METRIC_EPS) - l / (l_total + METRIC_EPS)).abs())
        .sum::<f64>()
        / t;
    Ok(GeodesicConsistency { gc, excluded: false })
}
