use crate::error::{CmmError, Result};
use crate::numeric::{gelu, layer_norm, matmul, Matrix};

/// Epsilon used by every layer norm in the block.
pub const LN_EPS: f64 = 1e-5;

/// Affine parameters of a layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNormParams {
    pub fn identity(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        layer_norm(x, &self.gamma, &self.beta, LN_EPS)
    }
}

/// Two-layer position-wise MLP: `gelu(u·W1 + b1)·W2 + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl FeedForward {
    pub fn zeros(width: usize, hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros(width, hidden),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(hidden, width),
            b2: vec![0.0; width],
        }
    }

    pub fn input_width(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_width(&self) -> usize {
        self.w2.cols()
    }

    pub fn apply(&self, u: &Matrix) -> Result<Matrix> {
        if self.w1.cols() != self.w2.rows() {
            return Err(CmmError::shape("FeedForward", self.w1.shape(), self.w2.shape()));
        }
        let hidden = gelu(&matmul(u, &self.w1)?.add_row_bias(&self.b1)?);
        matmul(&hidden, &self.w2)?.add_row_bias(&self.b2)
    }
}
