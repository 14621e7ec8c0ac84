//! Token-to-grid correlation: shared projection, multi-head scaled
//! dot-product scores over the grid axis, per-head top-k retention, and the
//! head-averaged visual context for each token.

use crate::error::{CmmError, Result};
use crate::numeric::{dot, matmul, softmax_in_place, top_k_indices, Matrix, Tensor3};

/// Text-side input, one row per token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenEmbeddings(Matrix);

impl TokenEmbeddings {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 {
            return Err(CmmError::param("token embeddings need at least one token"));
        }
        values.ensure_finite("token embeddings")?;
        Ok(Self(values))
    }

    pub fn tokens(&self) -> usize {
        self.0.rows()
    }

    pub fn channels(&self) -> usize {
        self.0.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }
}

/// Vision-side input, one row per grid region.
#[derive(Clone, Debug, PartialEq)]
pub struct GridEmbeddings(Matrix);

impl GridEmbeddings {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 {
            return Err(CmmError::param("grid embeddings need at least one grid"));
        }
        values.ensure_finite("grid embeddings")?;
        Ok(Self(values))
    }

    /// A grid set with no rows. Only the prepend baseline accepts it, where
    /// it degenerates to plain self-attention over the tokens.
    pub fn empty(channels: usize) -> Self {
        Self(Matrix::zeros(0, channels))
    }

    pub fn grids(&self) -> usize {
        self.0.rows()
    }

    pub fn channels(&self) -> usize {
        self.0.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorrelationConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub top_k: usize,
}

impl CorrelationConfig {
    pub fn shared_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self, grids: usize) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 {
            return Err(CmmError::param("heads and head_dim must be positive"));
        }
        if self.top_k == 0 || self.top_k > grids {
            return Err(CmmError::param(format!(
                "top_k must lie in 1..={grids}, got {}",
                self.top_k
            )));
        }
        Ok(())
    }
}

/// Projections into the shared latent space, right-multiplied: `X' = X W`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationWeights {
    pub w_text: Matrix,
    pub w_vision: Matrix,
}

/// Per-head token-to-grid scores with the retained top-k support.
///
/// All three tensors are laid out `[heads, tokens, grids]`. Straight out of
/// [`correlate`] every entry is retained and `renormalized == scores`;
/// [`apply_topk`] narrows the mask and rescales the survivors.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationScores {
    pub scores: Tensor3,
    pub mask: Vec<bool>,
    pub renormalized: Tensor3,
    pub top_k: usize,
}

impl CorrelationScores {
    pub fn heads(&self) -> usize {
        self.scores.dims()[0]
    }

    pub fn tokens(&self) -> usize {
        self.scores.dims()[1]
    }

    pub fn grids(&self) -> usize {
        self.scores.dims()[2]
    }

    pub fn mask_row(&self, h: usize, t: usize) -> &[bool] {
        let start = self.scores.index(h, t, 0);
        &self.mask[start..start + self.grids()]
    }

    /// Checks the simplex and support invariants on every `(head, token)` row.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let k = self.top_k;
        for h in 0..self.heads() {
            for t in 0..self.tokens() {
                let s = self.scores.lane(h, t);
                let r = self.renormalized.lane(h, t);
                let m = self.mask_row(h, t);
                let s_sum: f64 = s.iter().sum();
                let r_sum: f64 = r.iter().sum();
                let kept = m.iter().filter(|&&b| b).count();
                let off_support = r.iter().zip(m).any(|(&v, &keep)| !keep && v != 0.0);
                let out_of_range = s.iter().any(|&v| !(v > 0.0 && v <= 1.0));
                if (s_sum - 1.0).abs() > tol
                    || (r_sum - 1.0).abs() > tol
                    || kept != k
                    || off_support
                    || out_of_range
                {
                    return Err(CmmError::param(format!(
                        "score row (head {h}, token {t}) violates the simplex/top-{k} invariants: \
                         score sum {s_sum}, renormalized sum {r_sum}, {kept} retained"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Projects both modalities into the shared latent space.
pub fn project_shared(
    xt: &TokenEmbeddings,
    xv: &GridEmbeddings,
    w: &CorrelationWeights,
) -> Result<(Matrix, Matrix)> {
    let t = matmul(xt.values(), &w.w_text)?;
    let v = matmul(xv.values(), &w.w_vision)?;
    if t.cols() != v.cols() {
        return Err(CmmError::shape("project_shared", t.shape(), v.shape()));
    }
    Ok((t, v))
}

/// Splits `[N, D]` into `[H, N, D/H]`; head `h` holds channels
/// `h·D/H .. (h+1)·D/H`.
pub fn split_heads(x: &Matrix, heads: usize) -> Result<Tensor3> {
    if heads == 0 || !x.cols().is_multiple_of(heads) {
        return Err(CmmError::param(format!(
            "cannot split {} channels into {heads} heads",
            x.cols()
        )));
    }
    let dh = x.cols() / heads;
    let n = x.rows();
    let mut out = Tensor3::zeros(heads, n, dh);
    for h in 0..heads {
        for i in 0..n {
            out.lane_mut(h, i)
                .copy_from_slice(&x.row(i)[h * dh..(h + 1) * dh]);
        }
    }
    Ok(out)
}

/// Inverse of [`split_heads`].
pub fn merge_heads(x: &Tensor3) -> Matrix {
    let [heads, n, dh] = x.dims();
    let mut out = Matrix::zeros(n, heads * dh);
    for h in 0..heads {
        for i in 0..n {
            out.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(x.lane(h, i));
        }
    }
    out
}

/// Scaled dot-product scores per head, softmaxed over the grid axis.
pub fn correlate(xt_heads: &Tensor3, xv_heads: &Tensor3) -> Result<CorrelationScores> {
    let [h, t, dh] = xt_heads.dims();
    let [hv, g, dhv] = xv_heads.dims();
    if h != hv || dh != dhv {
        return Err(CmmError::shape("correlate", (h, dh), (hv, dhv)));
    }
    if g == 0 {
        return Err(CmmError::param("correlate needs at least one grid"));
    }
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut scores = Tensor3::zeros(h, t, g);
    for head in 0..h {
        for tok in 0..t {
            let q = xt_heads.lane(head, tok);
            let row = scores.lane_mut(head, tok);
            for (grid, slot) in row.iter_mut().enumerate() {
                *slot = dot(q, xv_heads.lane(head, grid)) * inv_sqrt;
            }
            softmax_in_place(row).map_err(|_| CmmError::EmptySupportRow { row: head * t + tok })?;
        }
    }
    Ok(CorrelationScores {
        mask: vec![true; h * t * g],
        renormalized: scores.clone(),
        scores,
        top_k: g,
    })
}

/// Keeps the `k` highest post-softmax scores of every `(head, token)` row
/// and rescales them to sum to one.
pub fn apply_topk(scores: CorrelationScores, k: usize) -> Result<CorrelationScores> {
    let [h, t, g] = scores.scores.dims();
    if k == 0 || k > g {
        return Err(CmmError::param(format!("top_k must lie in 1..={g}, got {k}")));
    }
    let mut mask = vec![false; h * t * g];
    let mut renormalized = Tensor3::zeros(h, t, g);
    for head in 0..h {
        for tok in 0..t {
            let row = scores.scores.lane(head, tok);
            let keep = top_k_indices(row, k)?;
            let total: f64 = keep.iter().map(|&i| row[i]).sum();
            let base = scores.scores.index(head, tok, 0);
            let out = renormalized.lane_mut(head, tok);
            for &i in &keep {
                mask[base + i] = true;
                out[i] = row[i] / total;
            }
        }
    }
    Ok(CorrelationScores {
        scores: scores.scores,
        mask,
        renormalized,
        top_k: k,
    })
}

/// Mean of the renormalized scores over heads, `[tokens, grids]`.
pub fn head_average(scores: &CorrelationScores) -> Matrix {
    let [h, t, g] = scores.renormalized.dims();
    let mut avg = Matrix::zeros(t, g);
    for head in 0..h {
        for tok in 0..t {
            for (a, v) in avg.row_mut(tok).iter_mut().zip(scores.renormalized.lane(head, tok)) {
                *a += v;
            }
        }
    }
    avg.scale(1.0 / h as f64)
}

/// Per-token visual context: head-averaged weights applied to the projected
/// grid rows.
pub fn aggregate_context(scores: &CorrelationScores, xv_proj: &Matrix) -> Result<Matrix> {
    if scores.grids() != xv_proj.rows() {
        return Err(CmmError::shape(
            "aggregate_context",
            (scores.tokens(), scores.grids()),
            xv_proj.shape(),
        ));
    }
    matmul(&head_average(scores), xv_proj)
}
