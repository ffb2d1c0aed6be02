//! Linear stand-in for a generator with a certified Lipschitz constant.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, DenseMatrix};

/// Relative slack allowed between the measured operator norm and the declared bound.
const NORM_SLACK: f64 = 1e-9;

/// `g(c) = W c + b` with `‖W‖₂ ≤ lipschitz_bound`, checked at construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyDecoder {
    /// output × input
    weights: DenseMatrix,
    bias: Vec<f64>,
    lipschitz_bound: f64,
}

impl ToyDecoder {
    pub fn new(weights: DenseMatrix, bias: Vec<f64>, lipschitz_bound: f64) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Dimension(format!(
                "bias has {} entries, weights have {} rows",
                bias.len(),
                weights.rows()
            )));
        }
        if !(lipschitz_bound > 0.0 && lipschitz_bound.is_finite()) {
            return Err(Error::Config("lipschitz bound must be positive".into()));
        }
        let op = operator_norm(&weights);
        if op > lipschitz_bound * (1.0 + NORM_SLACK) {
            return Err(Error::Validation(format!(
                "decoder operator norm {op} exceeds declared Lipschitz bound {lipschitz_bound}"
            )));
        }
        Ok(Self {
            weights,
            bias,
            lipschitz_bound,
        })
    }

    /// Gaussian weights rescaled so the operator norm equals `lipschitz_bound`.
    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, lipschitz_bound: f64, rng: &mut R) -> Result<Self> {
        let w = DenseMatrix::from_fn(output, input, |_, _| StandardNormal.sample(rng));
        let w = w.scale(lipschitz_bound / operator_norm(&w));
        let bias = (0..output).map(|_| StandardNormal.sample(rng)).collect::<Vec<f64>>();
        Self::new(w, bias.iter().map(|b| 0.1 * b).collect(), lipschitz_bound)
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn decode(&self, c: &[f64]) -> Vec<f64> {
        self.weights
            .row_iter()
            .zip(&self.bias)
            .map(|(row, b)| dot(row, c) + b)
            .collect()
    }

    /// `W Δ`, the output difference caused by an input difference.
    pub fn apply_linear(&self, delta: &[f64]) -> Vec<f64> {
        self.weights.row_iter().map(|row| dot(row, delta)).collect()
    }

    /// `Wᵀ y`.
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.input_dim()];
        for (row, &yi) in self.weights.row_iter().zip(y) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * yi;
            }
        }
        out
    }
}

#[derive(Deserialize)]
struct DecoderFile {
    weights: DenseMatrix,
    bias: Vec<f64>,
    lipschitz_bound: f64,
}

impl<'de> Deserialize<'de> for ToyDecoder {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = DecoderFile::deserialize(d)?;
        ToyDecoder::new(f.weights, f.bias, f.lipschitz_bound).map_err(serde::de::Error::custom)
    }
}

/// Largest singular value of `w` by power iteration on `wᵀw`.
pub fn operator_norm(w: &DenseMatrix) -> f64 {
    let n = w.cols();
    if n == 0 || w.rows() == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n).map(|j| 1.0 + 0.013 * j as f64 + 0.001 * (j * j % 7) as f64).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut sigma2 = 0.0;
    for _ in 0..20_000 {
        let wv: Vec<f64> = w.row_iter().map(|row| dot(row, &v)).collect();
        let mut wtwv = vec![0.0; n];
        for (row, &s) in w.row_iter().zip(&wv) {
            for (o, x) in wtwv.iter_mut().zip(row) {
                *o += x * s;
            }
        }
        let lambda = dot(&v, &wtwv);
        let nn = norm(&wtwv);
        if nn == 0.0 {
            return 0.0;
        }
        v = wtwv.iter().map(|x| x / nn).collect();
        if (lambda - sigma2).abs() <= 1e-15 * lambda.abs() {
            sigma2 = lambda;
            break;
        }
        sigma2 = lambda;
    }
    // the Rayleigh quotient of the final iterate is the tightest estimate
    let wv: Vec<f64> = w.row_iter().map(|row| dot(row, &v)).collect();
    dot(&wv, &wv).max(sigma2).sqrt()
}
