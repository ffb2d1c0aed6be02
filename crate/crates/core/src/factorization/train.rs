use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{FactorHeads, Priors, SampleSet};
use super::loss::{evaluate, loss_and_gradients, LossBreakdown, LossConfig};
use crate::decoder::ToyDecoder;
use crate::error::{Error, Result};

/// Global gradient-norm clipping threshold.
pub const CLIP_NORM: f64 = 1.0;
/// Warmup fraction used when `warmup_steps` is unset (3k of 100k steps at full scale).
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.03;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const BATCH_STREAM: u64 = 11;
const EVAL_STREAM: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// `None` scales the warmup to 3% of `steps`.
    pub warmup_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            steps: 2000,
            batch_size: 64,
            warmup_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// `learning_rate = 0` is accepted as a frozen-parameter run.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        Ok(())
    }

    pub fn effective_warmup(&self) -> usize {
        self.warmup_steps
            .unwrap_or_else(|| (self.steps as f64 * DEFAULT_WARMUP_FRACTION).round() as usize)
    }

    /// Learning rate at 0-based `step`: linear warmup, then cosine decay to zero.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let warm = self.effective_warmup();
        if step < warm {
            return self.learning_rate * (step + 1) as f64 / warm as f64;
        }
        let decay = self.steps.saturating_sub(warm).max(1);
        let t = ((step - warm) as f64 / decay as f64).min(1.0);
        self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(n_params: usize, weight_decay: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let update = (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
            *p -= lr * (update + self.weight_decay * *p);
        }
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let n = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if n > max_norm {
        let s = max_norm / n;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub heads: FactorHeads,
    /// Per-step breakdown on the training mini-batch, before the update.
    pub history: Vec<LossBreakdown>,
    /// Objective on a fixed evaluation batch before and after training.
    pub initial_eval: LossBreakdown,
    pub final_eval: LossBreakdown,
}

/// Sorted indices of a batch drawn without replacement; the whole set when it is small.
fn draw(n: usize, b: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= b {
        return (0..n).collect();
    }
    let mut idx = sample(rng, n, b).into_vec();
    idx.sort_unstable();
    idx
}

fn check_finite(b: &LossBreakdown, step: usize) -> Result<()> {
    match b.non_finite_term() {
        Some(term) => Err(Error::NonFinite {
            term: term.to_string(),
            step,
        }),
        None => Ok(()),
    }
}

/// Trains both heads jointly on mini-batches of `data`.
pub fn train(
    data: &SampleSet,
    heads: &FactorHeads,
    priors: &Priors,
    decoder: &ToyDecoder,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    loss_cfg.validate()?;
    train_cfg.validate()?;
    data.validate()?;
    if data.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: data.len() });
    }
    let mut batch_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    batch_rng.set_stream(BATCH_STREAM);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    eval_rng.set_stream(EVAL_STREAM);

    let eval_set = data.select(&draw(data.len(), train_cfg.batch_size, &mut eval_rng));
    let initial_eval = evaluate(&eval_set, heads, priors, decoder, loss_cfg)?;
    check_finite(&initial_eval, 0)?;

    let mut current = heads.clone();
    let mut params = current.params();
    let mut opt = AdamW::new(params.len(), train_cfg.weight_decay);
    let mut history = Vec::with_capacity(train_cfg.steps);
    for step in 0..train_cfg.steps {
        let batch = data.select(&draw(data.len(), train_cfg.batch_size, &mut batch_rng));
        let (breakdown, grads) = loss_and_gradients(&batch, &current, priors, decoder, loss_cfg)?;
        check_finite(&breakdown, step)?;
        let mut flat = grads.flat();
        if flat.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                term: "gradient".into(),
                step,
            });
        }
        history.push(breakdown);
        clip_global_norm(&mut flat, CLIP_NORM);
        let lr = train_cfg.learning_rate_at(step);
        if lr > 0.0 {
            opt.step(&mut params, &flat, lr);
            current.set_params(&params)?;
        }
    }
    let final_eval = evaluate(&eval_set, &current, priors, decoder, loss_cfg)?;
    check_finite(&final_eval, train_cfg.steps)?;
    Ok(TrainOutcome {
        heads: current,
        history,
        initial_eval,
        final_eval,
    })
}
