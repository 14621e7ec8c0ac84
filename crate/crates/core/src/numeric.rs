//! Dense f64 primitives shared by every stage of the fusion block.
//!
//! Everything here is a pure function of its inputs. Reductions always run
//! left-to-right in index order so results are bit-stable across runs and
//! agree exactly with a textbook triple loop.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{CmmError, Result};

/// Sequence length at which [`causal_conv`] switches to the FFT path.
pub const FFT_CROSSOVER: usize = 512;

/// Row-major dense matrix of 64-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CmmError::shape("Matrix::new", (rows, cols), (data.len(), 1)));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input; meant
    /// for literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    /// A single-row matrix.
    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a zero-width matrix has no data to chunk anyway.
        self.data.chunks_exact(self.cols.max(1))
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(CmmError::shape(op, self.shape(), other.shape()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Adds `bias` to every row.
    pub fn add_row_bias(&self, bias: &[f64]) -> Result<Matrix> {
        if bias.len() != self.cols {
            return Err(CmmError::shape("add_row_bias", self.shape(), (1, bias.len())));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for (v, b) in out.row_mut(i).iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Columns `start..end` as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Matrix {
        Matrix::from_fn(self.rows, end - start, |i, j| self.get(i, start + j))
    }

    /// Stacks `top` above `bottom`.
    pub fn vstack(top: &Matrix, bottom: &Matrix) -> Result<Matrix> {
        if top.cols != bottom.cols {
            return Err(CmmError::shape("vstack", top.shape(), bottom.shape()));
        }
        let mut data = Vec::with_capacity(top.data.len() + bottom.data.len());
        data.extend_from_slice(&top.data);
        data.extend_from_slice(&bottom.data);
        Ok(Matrix {
            rows: top.rows + bottom.rows,
            cols: top.cols,
            data,
        })
    }

    /// Mean of each column, accumulated top to bottom.
    pub fn column_means(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let n = self.rows as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(CmmError::NonFinite(what.to_string()))
        }
    }

    /// Largest absolute elementwise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Contiguous rank-3 tensor; `(i, j, k)` lives at `(i * d1 + j) * d2 + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(d0: usize, d1: usize, d2: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != d0 * d1 * d2 {
            return Err(CmmError::shape("Tensor3::new", (d0 * d1, d2), (data.len(), 1)));
        }
        Ok(Self {
            dims: [d0, d1, d2],
            data,
        })
    }

    pub fn zeros(d0: usize, d1: usize, d2: usize) -> Self {
        Self {
            dims: [d0, d1, d2],
            data: vec![0.0; d0 * d1 * d2],
        }
    }

    /// Stacks equally-shaped matrices along a new leading axis.
    pub fn stack(slices: &[Matrix]) -> Result<Self> {
        let (d1, d2) = slices.first().map_or((0, 0), |m| m.shape());
        let mut data = Vec::with_capacity(slices.len() * d1 * d2);
        for m in slices {
            if m.shape() != (d1, d2) {
                return Err(CmmError::shape("Tensor3::stack", (d1, d2), m.shape()));
            }
            data.extend_from_slice(m.as_slice());
        }
        Ok(Self {
            dims: [slices.len(), d1, d2],
            data,
        })
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.index(i, j, k);
        self.data[idx] = v;
    }

    /// The innermost vector at `(i, j, ..)`.
    #[inline]
    pub fn lane(&self, i: usize, j: usize) -> &[f64] {
        let start = self.index(i, j, 0);
        &self.data[start..start + self.dims[2]]
    }

    #[inline]
    pub fn lane_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let start = self.index(i, j, 0);
        let len = self.dims[2];
        &mut self.data[start..start + len]
    }

    /// Copy of the `i`-th leading slice.
    pub fn slice(&self, i: usize) -> Matrix {
        let n = self.dims[1] * self.dims[2];
        Matrix {
            rows: self.dims[1],
            cols: self.dims[2],
            data: self.data[i * n..(i + 1) * n].to_vec(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        if self.dims != other.dims {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `a · b`, accumulating each output entry over the shared index in order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(CmmError::shape("matmul", a.shape(), b.shape()));
    }
    let (n, m) = (a.rows, b.cols);
    let mut out = vec![0.0; n * m];
    // i-k-j ordering keeps the inner loop contiguous; each out[i][j] still
    // sees its k terms added in increasing k, same as the i-j-k loop.
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for (k, &aik) in a.row(i).iter().enumerate() {
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(Matrix {
        rows: n,
        cols: m,
        data: out,
    })
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_transpose_b(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(CmmError::shape("matmul_transpose_b", a.shape(), b.shape()));
    }
    Ok(Matrix::from_fn(a.rows, b.rows, |i, j| dot(a.row(i), b.row(j))))
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).fold(0.0, |acc, (a, b)| acc + a * b)
}

/// In-place max-shifted softmax of one row.
pub(crate) fn softmax_in_place(row: &mut [f64]) -> std::result::Result<(), ()> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(());
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

/// Softmax along each row, shifted by the row max.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    if m.rows == 0 || m.cols == 0 {
        return Err(CmmError::param("softmax_rows on an empty matrix"));
    }
    let mut out = m.clone();
    for i in 0..out.rows {
        softmax_in_place(out.row_mut(i)).map_err(|_| CmmError::EmptySupportRow { row: i })?;
    }
    Ok(out)
}

/// Per-row layer normalization with population variance and an affine map.
pub fn layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64], eps: f64) -> Result<Matrix> {
    if gamma.len() != x.cols || beta.len() != x.cols {
        return Err(CmmError::shape("layer_norm", x.shape(), (gamma.len(), beta.len())));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(CmmError::param(format!("layer_norm eps must be positive, got {eps}")));
    }
    let n = x.cols as f64;
    let mut out = x.clone();
    for i in 0..x.rows {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for ((v, g), b) in row.iter_mut().zip(gamma).zip(beta) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    Ok(out)
}

#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// Exact (erf-based) GELU, elementwise.
pub fn gelu(x: &Matrix) -> Matrix {
    x.map(gelu_scalar)
}

/// Indices of the `k` largest entries, returned in ascending index order.
/// Equal values rank the lower index first.
pub fn top_k_indices(row: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > row.len() {
        return Err(CmmError::param(format!(
            "top-k requires 1 <= k <= {}, got k = {k}",
            row.len()
        )));
    }
    let mut order: Vec<usize> = (0..row.len()).collect();
    // Stable sort keeps lower indices ahead of equal values.
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Per-channel causal convolution `y[t] = Σ_{s≤t} kernel[s] · signal[t−s]`.
///
/// Sequences of at least [`FFT_CROSSOVER`] steps go through the FFT path;
/// shorter ones use the direct sum.
pub fn causal_conv(signal: &Matrix, kernel: &Matrix) -> Result<Matrix> {
    if signal.shape() != kernel.shape() {
        return Err(CmmError::shape("causal_conv", signal.shape(), kernel.shape()));
    }
    if signal.rows >= FFT_CROSSOVER {
        causal_conv_fft(signal, kernel)
    } else {
        causal_conv_direct(signal, kernel)
    }
}

/// Quadratic-time reference path of [`causal_conv`].
pub fn causal_conv_direct(signal: &Matrix, kernel: &Matrix) -> Result<Matrix> {
    if signal.shape() != kernel.shape() {
        return Err(CmmError::shape("causal_conv_direct", signal.shape(), kernel.shape()));
    }
    let (t_len, channels) = signal.shape();
    let mut out = Matrix::zeros(t_len, channels);
    for t in 0..t_len {
        for s in 0..=t {
            let k_row = kernel.row(s);
            let x_row = signal.row(t - s);
            for c in 0..channels {
                out.data[t * channels + c] += k_row[c] * x_row[c];
            }
        }
    }
    Ok(out)
}

/// FFT path of [`causal_conv`]: zero-pads to a power of two at least `2T`.
pub fn causal_conv_fft(signal: &Matrix, kernel: &Matrix) -> Result<Matrix> {
    if signal.shape() != kernel.shape() {
        return Err(CmmError::shape("causal_conv_fft", signal.shape(), kernel.shape()));
    }
    let (t_len, channels) = signal.shape();
    if t_len == 0 {
        return Ok(Matrix::zeros(0, channels));
    }
    let n = (2 * t_len).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward: Arc<dyn Fft<f64>> = planner.plan_fft_forward(n);
    let inverse: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(n);
    let scale = 1.0 / n as f64;

    let mut out = Matrix::zeros(t_len, channels);
    let mut xs = vec![Complex64::new(0.0, 0.0); n];
    let mut ks = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..channels {
        xs.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        ks.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (t, (x, k)) in xs.iter_mut().zip(ks.iter_mut()).take(t_len).enumerate() {
            x.re = signal.get(t, c);
            k.re = kernel.get(t, c);
        }
        forward.process(&mut xs);
        forward.process(&mut ks);
        for (x, k) in xs.iter_mut().zip(&ks) {
            *x *= k;
        }
        inverse.process(&mut xs);
        for (t, x) in xs.iter().take(t_len).enumerate() {
            out.set(t, c, x.re * scale);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_and_small_case() {
        let m = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.5]]);
        assert_eq!(matmul(&Matrix::identity(3), &m).unwrap(), m);

        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Matrix::from_rows(&[&[0.0], &[1.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), Matrix::from_rows(&[&[2.0], &[4.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_symmetry_and_overflow() {
        let s = softmax_rows(&Matrix::row_vector(&[0.0, 0.0, 0.0])).unwrap();
        for &v in s.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_rows(&Matrix::row_vector(&[1000.0, 1000.0])).unwrap();
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rejects_all_negative_infinity() {
        let m = Matrix::from_rows(&[&[0.0, 1.0], &[f64::NEG_INFINITY, f64::NEG_INFINITY]]);
        assert!(matches!(softmax_rows(&m), Err(CmmError::EmptySupportRow { row: 1 })));
    }

    #[test]
    fn layer_norm_limits() {
        let c = Matrix::row_vector(&[3.0, 3.0, 3.0, 3.0]);
        let out = layer_norm(&c, &[1.0; 4], &[0.0; 4], 1e-5).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));

        let x = Matrix::row_vector(&[1.0, -1.0]);
        let out = layer_norm(&x, &[1.0; 2], &[0.0; 2], 1e-300).unwrap();
        assert_eq!(out.as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn layer_norm_rejects_bad_eps_and_lengths() {
        let x = Matrix::row_vector(&[1.0, 2.0]);
        assert!(layer_norm(&x, &[1.0; 2], &[0.0; 2], 0.0).is_err());
        assert!(layer_norm(&x, &[1.0; 3], &[0.0; 2], 1e-5).is_err());
    }

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        assert!(gelu_scalar(-10.0).abs() < 1e-6);
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_indices(&[0.1, 0.7, 0.2], 1).unwrap(), vec![1]);
        assert_eq!(top_k_indices(&[0.5, 0.5], 1).unwrap(), vec![0]);
        assert_eq!(top_k_indices(&[0.3, 0.1, 0.2], 3).unwrap(), vec![0, 1, 2]);
        assert!(top_k_indices(&[0.3, 0.1], 0).is_err());
        assert!(top_k_indices(&[0.3, 0.1], 3).is_err());
    }

    #[test]
    fn causal_conv_impulses() {
        let signal = Matrix::from_fn(6, 2, |t, c| (t * 3 + c) as f64 - 4.0);
        let mut impulse = Matrix::zeros(6, 2);
        impulse.set(0, 0, 1.0);
        impulse.set(0, 1, 1.0);
        assert_eq!(causal_conv(&signal, &impulse).unwrap(), signal);
        assert_eq!(causal_conv(&impulse, &signal).unwrap(), signal);
        assert!(causal_conv(&signal, &Matrix::zeros(5, 2)).is_err());
    }

    #[test]
    fn tensor3_indexing() {
        let t = Tensor3::new(2, 3, 4, (0..24).map(f64::from).collect()).unwrap();
        assert_eq!(t.get(1, 2, 3), 23.0);
        assert_eq!(t.lane(1, 0), &[12.0, 13.0, 14.0, 15.0]);
        assert_eq!(t.slice(1).row(2), &[20.0, 21.0, 22.0, 23.0]);
        assert!(Tensor3::new(2, 3, 4, vec![0.0; 23]).is_err());
    }
}
