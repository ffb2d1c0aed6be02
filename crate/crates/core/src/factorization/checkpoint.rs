use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::batch::FactorHeads;
use super::head::{Activation, ProjectionHead};
use super::loss::LossConfig;
use super::train::TrainConfig;
use crate::error::{Error, Result};

/// Shape of one head: `input → hidden → output`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedHead {
    pub shape: HeadShape,
    /// Base64 of little-endian f64 parameters in `[W1, b1, W2, b2]` row-major order.
    pub params: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub attr_head: EncodedHead,
    pub id_head: EncodedHead,
    pub loss_cfg: LossConfig,
    pub train_cfg: TrainConfig,
}

fn encode_head(h: &ProjectionHead) -> EncodedHead {
    let (input, hidden, output) = (h.input_dim(), h.hidden_dim(), h.output_dim());
    let bytes: Vec<u8> = h.params().iter().flat_map(|x| x.to_le_bytes()).collect();
    EncodedHead {
        shape: HeadShape {
            input,
            hidden,
            output,
            activation: h.activation,
        },
        params: STANDARD.encode(bytes),
    }
}

fn decode_head(e: &EncodedHead) -> Result<ProjectionHead> {
    let bytes = STANDARD
        .decode(&e.params)
        .map_err(|err| Error::Parse(format!("checkpoint parameters: {err}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Parse("checkpoint parameter bytes not a multiple of 8".into()));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let s = e.shape;
    let mut head = ProjectionHead::zeros(s.input, s.hidden, s.output);
    head.activation = s.activation;
    head.set_params(&params)?;
    head.validate()?;
    Ok(head)
}

impl Checkpoint {
    pub fn new(heads: &FactorHeads, loss_cfg: &LossConfig, train_cfg: &TrainConfig) -> Self {
        Self {
            attr_head: encode_head(&heads.attr),
            id_head: encode_head(&heads.id),
            loss_cfg: *loss_cfg,
            train_cfg: *train_cfg,
        }
    }

    pub fn heads(&self) -> Result<FactorHeads> {
        Ok(FactorHeads {
            attr: decode_head(&self.attr_head)?,
            id: decode_head(&self.id_head)?,
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
