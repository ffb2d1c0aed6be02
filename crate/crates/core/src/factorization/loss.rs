use serde::{Deserialize, Serialize};

use super::batch::{map_to_nodes, FactorHeads, LatentBatch, Priors, SampleSet};
use crate::decoder::ToyDecoder;
use crate::error::{Error, Result};
use crate::numerics::{norm, normalize_rows, pairwise_distance, DenseMatrix};
use crate::ot::{fgw_gradient_wrt_latent, fgw_loss, gw_loss, FgwConfig, PlanInit};

/// Norm floor used when normalising factor rows.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_e: f64,
    pub lambda_i: f64,
    pub lambda_perp: f64,
    pub lambda_lip: f64,
    pub lipschitz_l: f64,
    pub fgw: FgwConfig,
    /// Graph distance submatrices are rescaled so the full graph's diameter equals this
    /// value; unit-norm factors have pairwise distances in `[0, 2]`.
    pub target_diameter: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_e: 1.0,
            lambda_i: 1.0,
            lambda_perp: 1.0,
            lambda_lip: 0.1,
            lipschitz_l: 1.0,
            fgw: FgwConfig {
                init: PlanInit::Matching,
                ..FgwConfig::default()
            },
            target_diameter: 2.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_e", self.lambda_e),
            ("lambda_i", self.lambda_i),
            ("lambda_perp", self.lambda_perp),
            ("lambda_lip", self.lambda_lip),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.lipschitz_l > 0.0) {
            return Err(Error::Config("lipschitz_l must be positive".into()));
        }
        if !(self.target_diameter > 0.0 && self.target_diameter.is_finite()) {
            return Err(Error::Config("target_diameter must be positive".into()));
        }
        self.fgw.validate()
    }
}

/// Unweighted value of every objective term, and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub fgw: f64,
    pub gw: f64,
    pub orthogonality: f64,
    pub lipschitz: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("fgw", self.fgw),
            ("gw", self.gw),
            ("orthogonality", self.orthogonality),
            ("lipschitz", self.lipschitz),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// `‖Aᵀ I‖_F² / B`.
pub fn orthogonality_loss(z_attr: &DenseMatrix, z_id: &DenseMatrix) -> Result<f64> {
    if z_attr.rows() != z_id.rows() {
        return Err(Error::Dimension(format!(
            "batch sizes differ: {} vs {}",
            z_attr.rows(),
            z_id.rows()
        )));
    }
    if z_attr.rows() == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let m = z_attr.t_matmul(z_id)?;
    Ok(m.as_slice().iter().map(|x| x * x).sum::<f64>() / z_attr.rows() as f64)
}

/// Mean hinge `max(0, ‖g(z) − g(z′)‖ − L‖z − z′‖)` over row-paired latents.
pub fn lipschitz_loss(decoder: &ToyDecoder, z: &DenseMatrix, z_prime: &DenseMatrix, l: f64) -> Result<f64> {
    if z.shape() != z_prime.shape() {
        return Err(Error::Dimension(format!(
            "pair matrices differ: {:?} vs {:?}",
            z.shape(),
            z_prime.shape()
        )));
    }
    if z.cols() != decoder.input_dim() {
        return Err(Error::Dimension(format!(
            "decoder expects {} inputs, latents have {}",
            decoder.input_dim(),
            z.cols()
        )));
    }
    if z.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..z.rows())
        .map(|r| {
            let delta: Vec<f64> = z.row(r).iter().zip(z_prime.row(r)).map(|(a, b)| a - b).collect();
            hinge(decoder, &delta, l)
        })
        .sum();
    Ok(total / z.rows() as f64)
}

fn hinge(decoder: &ToyDecoder, delta: &[f64], l: f64) -> f64 {
    (norm(&decoder.apply_linear(delta)) - l * norm(delta)).max(0.0)
}

/// Decoder input `[â; î]` for every sample.
fn concat(a: &DenseMatrix, i: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), a.cols() + i.cols(), |r, c| {
        if c < a.cols() {
            a.get(r, c)
        } else {
            i.get(r, c - a.cols())
        }
    })
}

/// Distance targets for a batch: the graph submatrix indexed by `nodes`, rescaled.
pub fn graph_targets(graph: &crate::graph_priors::GraphPrior, nodes: &[usize], target_diameter: f64) -> DenseMatrix {
    let diameter = graph.diameter();
    let scale = if diameter > 0.0 { target_diameter / diameter } else { 1.0 };
    graph.distance_matrix.select(nodes, nodes).scale(scale)
}

/// Feature cost `C_ik = ‖â_k − m_{node(i)}‖²` where `m_u` is the batch mean of the
/// normalised attribute factors of samples mapped to node `u`.
fn feature_cost(a_hat: &DenseMatrix, nodes: &[usize]) -> (DenseMatrix, Vec<Vec<f64>>, Vec<usize>) {
    let b = a_hat.rows();
    let p = a_hat.cols();
    // slot per distinct node in first-seen order
    let mut slots: Vec<usize> = Vec::new();
    let slot_of: Vec<usize> = nodes
        .iter()
        .map(|n| match slots.iter().position(|s| s == n) {
            Some(k) => k,
            None => {
                slots.push(*n);
                slots.len() - 1
            }
        })
        .collect();
    let mut means = vec![vec![0.0; p]; slots.len()];
    let mut counts = vec![0usize; slots.len()];
    for (s, &k) in slot_of.iter().enumerate() {
        counts[k] += 1;
        for (m, v) in means[k].iter_mut().zip(a_hat.row(s)) {
            *m += v;
        }
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|x| *x /= c as f64);
    }
    let cost = DenseMatrix::from_fn(b, b, |i, k| {
        a_hat
            .row(k)
            .iter()
            .zip(&means[slot_of[i]])
            .map(|(x, m)| (x - m) * (x - m))
            .sum()
    });
    (cost, means, slot_of)
}

/// Adds `2 Σ_l G_kl (x_k − x_l) / D_kl` (the chain rule through pairwise distances) to `dx`.
fn distance_backward(x: &DenseMatrix, d: &DenseMatrix, g: &DenseMatrix, scale: f64, dx: &mut DenseMatrix) {
    let b = x.rows();
    for k in 0..b {
        for l in 0..b {
            let dist = d.get(k, l);
            if k == l || dist <= 0.0 {
                continue;
            }
            let coeff = scale * 2.0 * g.get(k, l) / dist;
            for c in 0..x.cols() {
                let v = coeff * (x.get(k, c) - x.get(l, c));
                dx.add_at(k, c, v);
            }
        }
    }
}

pub(crate) struct FactorObjective {
    pub breakdown: LossBreakdown,
    /// Gradients w.r.t. the normalised factors.
    pub d_attr: DenseMatrix,
    pub d_id: DenseMatrix,
    /// Gradients w.r.t. the raw head outputs.
    pub d_attr_raw: DenseMatrix,
    pub d_id_raw: DenseMatrix,
}

/// Evaluates the objective on normalised factors and its gradient w.r.t. them.
pub(crate) fn factor_objective(
    z_attr: &DenseMatrix,
    z_id: &DenseMatrix,
    a_hat: &DenseMatrix,
    i_hat: &DenseMatrix,
    emo_nodes: &[usize],
    id_nodes: &[usize],
    priors: &Priors,
    decoder: &ToyDecoder,
    cfg: &LossConfig,
) -> Result<FactorObjective> {
    cfg.validate()?;
    let b = a_hat.rows();
    if b < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: b });
    }
    let mut d_attr = DenseMatrix::zeros(b, a_hat.cols());
    let mut d_id = DenseMatrix::zeros(b, i_hat.cols());

    // structural alignment of the attribute factor with the emotion graph
    let da = pairwise_distance(a_hat)?;
    let de = graph_targets(&priors.emotion, emo_nodes, cfg.target_diameter);
    let (cost, means, slot_of) = feature_cost(a_hat, emo_nodes);
    let fgw_plan = fgw_loss(&de, &da, &cost, &cfg.fgw)?;
    if cfg.lambda_e > 0.0 {
        let g = fgw_gradient_wrt_latent(&da, &de, &fgw_plan)?;
        distance_backward(a_hat, &da, &g, cfg.lambda_e, &mut d_attr);
        let alpha = cfg.fgw.alpha;
        if alpha > 0.0 {
            let pi = &fgw_plan.coupling;
            let scale = cfg.lambda_e * alpha;
            let mut d_means = vec![vec![0.0; a_hat.cols()]; means.len()];
            for i in 0..b {
                let m = &means[slot_of[i]];
                for k in 0..b {
                    let w = pi.get(i, k);
                    if w == 0.0 {
                        continue;
                    }
                    for c in 0..a_hat.cols() {
                        let diff = 2.0 * w * (a_hat.get(k, c) - m[c]);
                        d_attr.add_at(k, c, scale * diff);
                        d_means[slot_of[i]][c] -= scale * diff;
                    }
                }
            }
            let mut counts = vec![0usize; means.len()];
            slot_of.iter().for_each(|&k| counts[k] += 1);
            for s in 0..b {
                let k = slot_of[s];
                for c in 0..a_hat.cols() {
                    d_attr.add_at(s, c, d_means[k][c] / counts[k] as f64);
                }
            }
        }
    }

    // identity factor against the identity graph (relational only)
    let di = pairwise_distance(i_hat)?;
    let dg = graph_targets(&priors.identity, id_nodes, cfg.target_diameter);
    let gw_cfg = FgwConfig { alpha: 0.0, ..cfg.fgw };
    let gw_plan = gw_loss(&dg, &di, &gw_cfg)?;
    if cfg.lambda_i > 0.0 {
        let g = fgw_gradient_wrt_latent(&di, &dg, &gw_plan)?;
        distance_backward(i_hat, &di, &g, cfg.lambda_i, &mut d_id);
    }

    // decoupling acts on the raw factors; only distances are taken after normalisation
    let mut d_attr_raw = DenseMatrix::zeros(b, z_attr.cols());
    let mut d_id_raw = DenseMatrix::zeros(b, z_id.cols());
    let m = z_attr.t_matmul(z_id)?;
    let orthogonality = m.as_slice().iter().map(|x| x * x).sum::<f64>() / b as f64;
    if cfg.lambda_perp > 0.0 {
        let s = cfg.lambda_perp * 2.0 / b as f64;
        let ga = z_id.matmul(&m.transpose())?;
        let gi = z_attr.matmul(&m)?;
        for (d, g) in d_attr_raw.as_mut_slice().iter_mut().zip(ga.as_slice()) {
            *d += s * g;
        }
        for (d, g) in d_id_raw.as_mut_slice().iter_mut().zip(gi.as_slice()) {
            *d += s * g;
        }
    }

    // smoothness over all unordered pairs of decoder inputs
    let c = concat(a_hat, i_hat);
    if c.cols() != decoder.input_dim() {
        return Err(Error::Dimension(format!(
            "decoder expects {} inputs, factors give {}",
            decoder.input_dim(),
            c.cols()
        )));
    }
    let n_pairs = (b * (b - 1) / 2) as f64;
    let l = cfg.lipschitz_l;
    let mut lip_total = 0.0;
    let p = a_hat.cols();
    for i in 0..b {
        for j in (i + 1)..b {
            let delta: Vec<f64> = c.row(i).iter().zip(c.row(j)).map(|(x, y)| x - y).collect();
            let wd = decoder.apply_linear(&delta);
            let (nw, nd) = (norm(&wd), norm(&delta));
            let h = nw - l * nd;
            if h <= 0.0 {
                continue;
            }
            lip_total += h;
            if cfg.lambda_lip > 0.0 && nw > 0.0 && nd > 0.0 {
                let wtw = decoder.apply_transpose(&wd);
                let s = cfg.lambda_lip / n_pairs;
                for (col, (a, dl)) in wtw.iter().zip(&delta).enumerate() {
                    let gcol = s * (a / nw - l * dl / nd);
                    if col < p {
                        d_attr.add_at(i, col, gcol);
                        d_attr.add_at(j, col, -gcol);
                    } else {
                        d_id.add_at(i, col - p, gcol);
                        d_id.add_at(j, col - p, -gcol);
                    }
                }
            }
        }
    }
    let lipschitz = lip_total / n_pairs;

    let fgw = fgw_plan.loss;
    let gw = gw_plan.loss;
    let total = cfg.lambda_e * fgw + cfg.lambda_i * gw + cfg.lambda_perp * orthogonality + cfg.lambda_lip * lipschitz;
    Ok(FactorObjective {
        breakdown: LossBreakdown {
            fgw,
            gw,
            orthogonality,
            lipschitz,
            total,
        },
        d_attr,
        d_id,
        d_attr_raw,
        d_id_raw,
    })
}

/// Total objective of a latent batch with its per-term breakdown.
///
/// Factors are L2-normalised row-wise before any distance is taken; the orthogonality
/// term uses the raw head outputs.
pub fn total_loss(
    batch: &LatentBatch,
    priors: &Priors,
    decoder: &ToyDecoder,
    cfg: &LossConfig,
) -> Result<(f64, LossBreakdown)> {
    batch.validate()?;
    let (emo, id) = map_to_nodes(&batch.va, &batch.emotion_labels, &batch.identity_groups, priors)?;
    let a_hat = normalize_rows(&batch.z_attr, NORM_FLOOR);
    let i_hat = normalize_rows(&batch.z_id, NORM_FLOOR);
    let obj = factor_objective(&batch.z_attr, &batch.z_id, &a_hat, &i_hat, &emo, &id, priors, decoder, cfg)?;
    Ok((obj.breakdown.total, obj.breakdown))
}

/// Backpropagates `d_hat = ∂L/∂(x/‖x‖)` to `∂L/∂x`.
fn normalize_backward(x: &DenseMatrix, d_hat: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let n = norm(row);
        let g = d_hat.row(r);
        if n > NORM_FLOOR {
            let proj: f64 = row.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / (n * n);
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = (g[c] - proj * row[c]) / n;
            }
        } else {
            for (o, gv) in out.row_mut(r).iter_mut().zip(g) {
                *o = gv / NORM_FLOOR;
            }
        }
    }
    out
}

/// Head-parameter gradients; layout matches [`FactorHeads::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub attr: Vec<f64>,
    pub id: Vec<f64>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut g = self.attr.clone();
        g.extend_from_slice(&self.id);
        g
    }
}

/// Objective and head gradients in one pass.
///
/// OT terms use fixed-plan (envelope) gradients; everything else is exact.
pub fn loss_and_gradients(
    samples: &SampleSet,
    heads: &FactorHeads,
    priors: &Priors,
    decoder: &ToyDecoder,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Gradients)> {
    samples.validate()?;
    let (emo, id) = map_to_nodes(&samples.va, &samples.emotion_labels, &samples.identity_groups, priors)?;
    let (z_attr, cache_a) = heads.attr.forward_cached(&samples.z)?;
    let (z_id, cache_i) = heads.id.forward_cached(&samples.z)?;
    let a_hat = normalize_rows(&z_attr, NORM_FLOOR);
    let i_hat = normalize_rows(&z_id, NORM_FLOOR);
    let obj = factor_objective(&z_attr, &z_id, &a_hat, &i_hat, &emo, &id, priors, decoder, cfg)?;
    let mut d_attr = normalize_backward(&z_attr, &obj.d_attr);
    let mut d_id = normalize_backward(&z_id, &obj.d_id);
    for (d, g) in d_attr.as_mut_slice().iter_mut().zip(obj.d_attr_raw.as_slice()) {
        *d += g;
    }
    for (d, g) in d_id.as_mut_slice().iter_mut().zip(obj.d_id_raw.as_slice()) {
        *d += g;
    }
    let g_attr = heads.attr.backward(&cache_a, &d_attr)?;
    let g_id = heads.id.backward(&cache_i, &d_id)?;
    Ok((
        obj.breakdown,
        Gradients {
            attr: g_attr,
            id: g_id,
        },
    ))
}

pub fn backward(
    samples: &SampleSet,
    priors: &Priors,
    decoder: &ToyDecoder,
    cfg: &LossConfig,
    heads: &FactorHeads,
) -> Result<Gradients> {
    Ok(loss_and_gradients(samples, heads, priors, decoder, cfg)?.1)
}

/// Objective of `samples` encoded by `heads`.
pub fn evaluate(
    samples: &SampleSet,
    heads: &FactorHeads,
    priors: &Priors,
    decoder: &ToyDecoder,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let batch = LatentBatch::encode(samples, heads)?;
    Ok(total_loss(&batch, priors, decoder, cfg)?.1)
}
