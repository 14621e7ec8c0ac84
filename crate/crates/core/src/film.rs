//! Gated FiLM conditioning of the text stream on its visual context.
//!
//! Both directions use the gated form `x ⊙ (1 + α·γ) + α·β`, so α = 0 turns
//! modulation off exactly. FiLM-in normalizes its input first; FiLM-out does not.

use crate::error::{CmmError, Result};
use crate::layers::LN_EPS;
use crate::numeric::{layer_norm, matmul, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct FilmWeights {
    /// Context → `[γ_in | β_in]`, shape `[D_shared, 2·D_t]`.
    pub w_in: Matrix,
    /// Context → `[γ_out | β_out]`, shape `[D_shared, 2·D_t]`.
    pub w_out: Matrix,
    /// Shared gate for both modulations.
    pub alpha: f64,
    pub ln_gamma: Vec<f64>,
    pub ln_beta: Vec<f64>,
}

/// Per-token scale and shift, each `[T, D_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Modulation {
    pub gamma: Matrix,
    pub beta: Matrix,
}

/// Linear map of the context followed by a split into scale and shift halves.
pub fn film_generate(context: &Matrix, w: &Matrix) -> Result<Modulation> {
    if !w.cols().is_multiple_of(2) {
        return Err(CmmError::param(format!(
            "FiLM map must have an even output width, got {}",
            w.cols()
        )));
    }
    let both = matmul(context, w)?;
    let d = w.cols() / 2;
    Ok(Modulation {
        gamma: both.slice_cols(0, d),
        beta: both.slice_cols(d, 2 * d),
    })
}

fn modulate(x: &Matrix, m: &Modulation, alpha: f64, op: &'static str) -> Result<Matrix> {
    if m.gamma.shape() != x.shape() || m.beta.shape() != x.shape() {
        return Err(CmmError::shape(op, x.shape(), m.gamma.shape()));
    }
    let mut out = x.clone();
    for ((v, g), b) in out
        .as_mut_slice()
        .iter_mut()
        .zip(m.gamma.as_slice())
        .zip(m.beta.as_slice())
    {
        *v = *v * (1.0 + alpha * g) + alpha * b;
    }
    Ok(out)
}

/// `LN(x) ⊙ (1 + α·γ_in) + α·β_in`.
pub fn film_in(
    xt: &Matrix,
    m: &Modulation,
    alpha: f64,
    ln_gamma: &[f64],
    ln_beta: &[f64],
) -> Result<Matrix> {
    let normed = layer_norm(xt, ln_gamma, ln_beta, LN_EPS)?;
    modulate(&normed, m, alpha, "film_in")
}

/// `y ⊙ (1 + α·γ_out) + α·β_out`.
pub fn film_out(y: &Matrix, m: &Modulation, alpha: f64) -> Result<Matrix> {
    modulate(y, m, alpha, "film_out")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: usize, cols: usize, salt: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |i, j| ((i * 31 + j * 17) as f64 * 0.37 + salt).sin())
    }

    #[test]
    fn generate_with_zero_weights_or_context() {
        let c = sample(3, 4, 0.1);
        let m = film_generate(&c, &Matrix::zeros(4, 6)).unwrap();
        assert!(m.gamma.as_slice().iter().chain(m.beta.as_slice()).all(|&v| v == 0.0));
        let m = film_generate(&Matrix::zeros(3, 4), &sample(4, 6, 0.2)).unwrap();
        assert!(m.gamma.as_slice().iter().chain(m.beta.as_slice()).all(|&v| v == 0.0));
        assert_eq!(m.gamma.shape(), (3, 3));
        assert!(film_generate(&c, &Matrix::zeros(4, 5)).is_err());
    }

    #[test]
    fn gate_off_and_zero_modulation() {
        let x = sample(4, 6, 0.3);
        let ones = vec![1.0; 6];
        let zeros = vec![0.0; 6];
        let ln = layer_norm(&x, &ones, &zeros, LN_EPS).unwrap();
        let m = Modulation {
            gamma: sample(4, 6, 1.0),
            beta: sample(4, 6, 2.0),
        };
        assert_eq!(film_in(&x, &m, 0.0, &ones, &zeros).unwrap(), ln);
        assert_eq!(film_out(&x, &m, 0.0).unwrap(), x);

        let zero = Modulation {
            gamma: Matrix::zeros(4, 6),
            beta: Matrix::zeros(4, 6),
        };
        assert_eq!(film_in(&x, &zero, 0.7, &ones, &zeros).unwrap(), ln);
    }

    #[test]
    fn film_out_shift_only() {
        let beta = sample(2, 3, 0.5);
        let m = Modulation {
            gamma: sample(2, 3, 0.9),
            beta: beta.clone(),
        };
        let out = film_out(&Matrix::zeros(2, 3), &m, 0.25).unwrap();
        assert!(out.max_abs_diff(&beta.scale(0.25)) == 0.0);
    }

    #[test]
    fn modulation_shape_mismatch() {
        let m = Modulation {
            gamma: Matrix::zeros(2, 3),
            beta: Matrix::zeros(2, 3),
        };
        assert!(film_out(&Matrix::zeros(3, 3), &m, 0.1).is_err());
    }
}
