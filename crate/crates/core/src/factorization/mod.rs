//! Attribute / identity projection heads, the combined objective with analytic
//! gradients, and the AdamW training loop.

mod batch;
mod checkpoint;
mod head;
mod loss;
mod train;

pub use batch::{map_to_nodes, FactorHeads, LatentBatch, Priors, SampleSet};
pub use checkpoint::{Checkpoint, EncodedHead, HeadShape};
pub use head::{forward_heads, Activation, HeadCache, ProjectionHead};
pub use loss::{
    backward, evaluate, graph_targets, lipschitz_loss, loss_and_gradients, orthogonality_loss, total_loss,
    Gradients, LossBreakdown, LossConfig, NORM_FLOOR,
};
pub use train::{clip_global_norm, train, AdamW, TrainConfig, TrainOutcome, CLIP_NORM, DEFAULT_WARMUP_FRACTION};
