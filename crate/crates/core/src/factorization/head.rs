use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Identity => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Self::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Identity => 1.0,
        }
    }
}

/// Two-layer MLP `h(z) = W2ᵀ σ(W1ᵀ z + b1) + b2`, stored so that a batch `Z` (B×d)
/// maps as `σ(Z W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    /// d × hidden
    pub layer1_weights: DenseMatrix,
    pub layer1_bias: Vec<f64>,
    /// hidden × out
    pub layer2_weights: DenseMatrix,
    pub layer2_bias: Vec<f64>,
    #[serde(default)]
    pub activation: Activation,
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct HeadCache {
    input: DenseMatrix,
    pre_activation: DenseMatrix,
    hidden: DenseMatrix,
}

impl ProjectionHead {
    pub fn new(
        layer1_weights: DenseMatrix,
        layer1_bias: Vec<f64>,
        layer2_weights: DenseMatrix,
        layer2_bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let head = Self {
            layer1_weights,
            layer1_bias,
            layer2_weights,
            layer2_bias,
            activation,
        };
        head.validate()?;
        Ok(head)
    }

    /// Weights and biases drawn from `U(−1/√fan_in, 1/√fan_in)` per layer.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let u1 = Uniform::new_inclusive(-1.0, 1.0).expect("finite range");
        let (s1, s2) = (1.0 / (input as f64).sqrt(), 1.0 / (hidden as f64).sqrt());
        let mut draw = |n: usize, s: f64| (0..n).map(|_| s * u1.sample(rng)).collect::<Vec<f64>>();
        let w1 = draw(input * hidden, s1);
        let b1 = draw(hidden, s1);
        let w2 = draw(hidden * output, s2);
        let b2 = draw(output, s2);
        Self {
            layer1_weights: DenseMatrix::new(input, hidden, w1).expect("sized"),
            layer1_bias: b1,
            layer2_weights: DenseMatrix::new(hidden, output, w2).expect("sized"),
            layer2_bias: b2,
            activation: Activation::Relu,
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            layer1_weights: DenseMatrix::zeros(input, hidden),
            layer1_bias: vec![0.0; hidden],
            layer2_weights: DenseMatrix::zeros(hidden, output),
            layer2_bias: vec![0.0; output],
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = self.layer1_weights.shape();
        let (h2, o) = self.layer2_weights.shape();
        if h != h2 || self.layer1_bias.len() != h || self.layer2_bias.len() != o || d == 0 || o == 0 {
            return Err(Error::Dimension(format!(
                "head shapes do not chain: W1 {d}x{h}, b1 {}, W2 {h2}x{o}, b2 {}",
                self.layer1_bias.len(),
                self.layer2_bias.len()
            )));
        }
        if self.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation("head has non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer1_weights.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layer1_weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layer2_weights.cols()
    }

    pub fn forward(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.forward_cached(z)?.0)
    }

    pub fn forward_cached(&self, z: &DenseMatrix) -> Result<(DenseMatrix, HeadCache)> {
        if z.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} columns, head expects {}",
                z.cols(),
                self.input_dim()
            )));
        }
        let mut pre = z.matmul(&self.layer1_weights)?;
        for i in 0..pre.rows() {
            for (v, b) in pre.row_mut(i).iter_mut().zip(&self.layer1_bias) {
                *v += b;
            }
        }
        let hidden = pre.map(|x| self.activation.apply(x));
        let mut out = hidden.matmul(&self.layer2_weights)?;
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(&self.layer2_bias) {
                *v += b;
            }
        }
        let cache = HeadCache {
            input: z.clone(),
            pre_activation: pre,
            hidden,
        };
        Ok((out, cache))
    }

    /// Gradient of a scalar loss w.r.t. all parameters, given `d_out = ∂loss/∂output`.
    /// Layout matches [`ProjectionHead::params`].
    pub fn backward(&self, cache: &HeadCache, d_out: &DenseMatrix) -> Result<Vec<f64>> {
        if d_out.shape() != (cache.hidden.rows(), self.output_dim()) {
            return Err(Error::Dimension(format!(
                "output gradient is {:?}, expected {}x{}",
                d_out.shape(),
                cache.hidden.rows(),
                self.output_dim()
            )));
        }
        let d_w2 = cache.hidden.t_matmul(d_out)?;
        let d_b2 = d_out.col_sums();
        let d_hidden = d_out.matmul(&self.layer2_weights.transpose())?;
        let d_pre = DenseMatrix::from_fn(d_hidden.rows(), d_hidden.cols(), |i, j| {
            d_hidden.get(i, j) * self.activation.derivative(cache.pre_activation.get(i, j))
        });
        let d_w1 = cache.input.t_matmul(&d_pre)?;
        let d_b1 = d_pre.col_sums();
        let mut grad = Vec::with_capacity(self.n_params());
        grad.extend_from_slice(d_w1.as_slice());
        grad.extend_from_slice(&d_b1);
        grad.extend_from_slice(d_w2.as_slice());
        grad.extend_from_slice(&d_b2);
        Ok(grad)
    }

    pub fn n_params(&self) -> usize {
        self.layer1_weights.as_slice().len()
            + self.layer1_bias.len()
            + self.layer2_weights.as_slice().len()
            + self.layer2_bias.len()
    }

    /// Flat parameter vector: W1 (row-major), b1, W2 (row-major), b2.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(self.layer1_weights.as_slice());
        p.extend_from_slice(&self.layer1_bias);
        p.extend_from_slice(self.layer2_weights.as_slice());
        p.extend_from_slice(&self.layer2_bias);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "{} parameters for a head with {}",
                p.len(),
                self.n_params()
            )));
        }
        let mut rest = p;
        for dst in [
            self.layer1_weights.as_mut_slice(),
            self.layer1_bias.as_mut_slice(),
            self.layer2_weights.as_mut_slice(),
            self.layer2_bias.as_mut_slice(),
        ] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }
}

/// Applies both factor heads to the shared representation.
pub fn forward_heads(
    z: &DenseMatrix,
    h_attr: &ProjectionHead,
    h_id: &ProjectionHead,
) -> Result<(DenseMatrix, DenseMatrix)> {
    Ok((h_attr.forward(z)?, h_id.forward(z)?))
}
