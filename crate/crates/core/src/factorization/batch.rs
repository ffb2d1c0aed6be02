use serde::{Deserialize, Serialize};

use super::head::{forward_heads, ProjectionHead};
use crate::error::{Error, Result};
use crate::graph_priors::{nearest_node, GraphPrior};
use crate::numerics::DenseMatrix;

/// Raw samples: shared representation plus the labels needed to place them on the graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    /// B × d shared representation.
    pub z: DenseMatrix,
    /// B × 2 valence–arousal coordinates, used to pick the emotion prototype.
    pub va: DenseMatrix,
    pub emotion_labels: Vec<String>,
    pub identity_groups: Vec<String>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.z.rows();
        if self.va.rows() != b || self.emotion_labels.len() != b || self.identity_groups.len() != b {
            return Err(Error::Dimension(format!(
                "inconsistent batch: z {b}, va {}, labels {}, groups {}",
                self.va.rows(),
                self.emotion_labels.len(),
                self.identity_groups.len()
            )));
        }
        Ok(())
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            z: self.z.select_rows(idx),
            va: self.va.select_rows(idx),
            emotion_labels: idx.iter().map(|&i| self.emotion_labels[i].clone()).collect(),
            identity_groups: idx.iter().map(|&i| self.identity_groups[i].clone()).collect(),
        }
    }
}

/// Samples together with their learned attribute and identity factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentBatch {
    pub z: DenseMatrix,
    pub z_attr: DenseMatrix,
    pub z_id: DenseMatrix,
    pub va: DenseMatrix,
    pub emotion_labels: Vec<String>,
    pub identity_groups: Vec<String>,
}

impl LatentBatch {
    pub fn encode(samples: &SampleSet, heads: &FactorHeads) -> Result<Self> {
        samples.validate()?;
        let (z_attr, z_id) = forward_heads(&samples.z, &heads.attr, &heads.id)?;
        Ok(Self {
            z: samples.z.clone(),
            z_attr,
            z_id,
            va: samples.va.clone(),
            emotion_labels: samples.emotion_labels.clone(),
            identity_groups: samples.identity_groups.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.z_attr.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.z_attr.rows();
        if self.z_id.rows() != b
            || self.z.rows() != b
            || self.va.rows() != b
            || self.emotion_labels.len() != b
            || self.identity_groups.len() != b
        {
            return Err(Error::Dimension("latent batch fields disagree on batch size".into()));
        }
        Ok(())
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            z: self.z.select_rows(idx),
            z_attr: self.z_attr.select_rows(idx),
            z_id: self.z_id.select_rows(idx),
            va: self.va.select_rows(idx),
            emotion_labels: idx.iter().map(|&i| self.emotion_labels[i].clone()).collect(),
            identity_groups: idx.iter().map(|&i| self.identity_groups[i].clone()).collect(),
        }
    }
}

/// The attribute and identity heads trained together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorHeads {
    pub attr: ProjectionHead,
    pub id: ProjectionHead,
}

impl FactorHeads {
    pub fn n_params(&self) -> usize {
        self.attr.n_params() + self.id.n_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.attr.params();
        p.extend(self.id.params());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "{} parameters for heads with {}",
                p.len(),
                self.n_params()
            )));
        }
        let (a, i) = p.split_at(self.attr.n_params());
        self.attr.set_params(a)?;
        self.id.set_params(i)
    }
}

/// Emotion graph `G_e` and identity graph `G_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub emotion: GraphPrior,
    pub identity: GraphPrior,
}

/// Places every sample on both graphs.
///
/// Emotion: the prototype nearest in valence–arousal space among those whose majority
/// label equals the sample's emotion. Identity: the node labelled with the group id.
pub fn map_to_nodes(
    va: &DenseMatrix,
    emotion_labels: &[String],
    identity_groups: &[String],
    priors: &Priors,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let emo = emotion_labels
        .iter()
        .enumerate()
        .map(|(s, label)| {
            nearest_node(
                va.row(s),
                &priors.emotion.node_embeddings,
                priors.emotion.nodes_with_label(label),
            )
            .ok_or_else(|| Error::Mapping(format!("emotion label {label:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let id = identity_groups
        .iter()
        .map(|g| {
            priors
                .identity
                .node_for_label(g)
                .ok_or_else(|| Error::Mapping(format!("identity group {g:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((emo, id))
}
