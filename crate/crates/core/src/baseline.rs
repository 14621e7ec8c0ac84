//! Attention-based connectors the modulator is compared against.
//!
//! * Prepend: grid features go through a two-layer MLP, are prepended to the
//!   tokens, and one self-attention layer runs over the joint sequence.
//!   Quadratic in `G + T`.
//! * Cross-attention: tokens query the projected grids. `Θ(T·G·D)`.
//!
//! Both finish with residual + FFN + layer norm and return the token rows.

use crate::cmm::FusionOutput;
use crate::correlation::{GridEmbeddings, TokenEmbeddings};
use crate::error::{CmmError, Result, StageExt};
use crate::layers::{FeedForward, LayerNormParams};
use crate::numeric::{dot, matmul, softmax_in_place, Matrix};

/// Multi-head attention projections, right-multiplied and bias-free.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub heads: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineWeights {
    /// Grid features → text width; hidden width is `2·D_t`.
    pub projector: FeedForward,
    pub attention: AttentionWeights,
    pub ffn: FeedForward,
    pub out_ln: LayerNormParams,
}

/// Scaled dot-product attention of `queries` over `keys_values`, softmax over
/// the key axis, one head per contiguous channel slice.
///
/// Scores are produced one query row at a time, so memory stays linear in
/// the key count.
pub fn multi_head_attention(
    queries: &Matrix,
    keys_values: &Matrix,
    w: &AttentionWeights,
) -> Result<Matrix> {
    let q = matmul(queries, &w.wq)?;
    let k = matmul(keys_values, &w.wk)?;
    let v = matmul(keys_values, &w.wv)?;
    if q.cols() != k.cols() || k.cols() != v.cols() {
        return Err(CmmError::shape("multi_head_attention", q.shape(), k.shape()));
    }
    let width = q.cols();
    if w.heads == 0 || !width.is_multiple_of(w.heads) {
        return Err(CmmError::param(format!(
            "cannot split {width} channels into {} heads",
            w.heads
        )));
    }
    if k.rows() == 0 {
        return Err(CmmError::param("attention over an empty key set"));
    }
    let dh = width / w.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let n_keys = k.rows();

    let mut merged = Matrix::zeros(q.rows(), width);
    let mut probs = vec![0.0; n_keys];
    for i in 0..q.rows() {
        for h in 0..w.heads {
            let cols = h * dh..(h + 1) * dh;
            let qi = &q.row(i)[cols.clone()];
            for (j, p) in probs.iter_mut().enumerate() {
                *p = dot(qi, &k.row(j)[cols.clone()]) * scale;
            }
            softmax_in_place(&mut probs).map_err(|_| CmmError::EmptySupportRow { row: i })?;
            let out = &mut merged.row_mut(i)[cols.clone()];
            for (j, &p) in probs.iter().enumerate() {
                for (o, &vj) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o += p * vj;
                }
            }
        }
    }
    matmul(&merged, &w.wo)
}

fn finish(residual_in: &Matrix, attended: &Matrix, w: &BaselineWeights) -> Result<Matrix> {
    let u = residual_in.add(attended).stage("attention residual")?;
    let refined = u.add(&w.ffn.apply(&u).stage("ffn")?).stage("ffn residual")?;
    w.out_ln.apply(&refined).stage("output layer norm")
}

fn check_inputs(xt: &TokenEmbeddings, xv: &GridEmbeddings, w: &BaselineWeights) -> Result<()> {
    if xv.channels() != w.projector.input_width() || xt.channels() != w.projector.output_width() {
        return Err(CmmError::shape(
            "baseline inputs",
            (xt.channels(), xv.channels()),
            (w.projector.output_width(), w.projector.input_width()),
        ))
        .stage("inputs");
    }
    Ok(())
}

/// Prepend connector. An empty grid set reduces to self-attention over the
/// tokens alone.
pub fn prepend_forward(
    xt: &TokenEmbeddings,
    xv: &GridEmbeddings,
    w: &BaselineWeights,
) -> Result<FusionOutput> {
    check_inputs(xt, xv, w)?;
    let prefix = w.projector.apply(xv.values()).stage("grid projector")?;
    let joint = Matrix::vstack(&prefix, xt.values()).stage("prepend")?;
    // Only the trailing token rows are returned, and every later stage is
    // row-wise, so only those rows need to issue queries.
    let attended =
        multi_head_attention(xt.values(), &joint, &w.attention).stage("self-attention")?;
    let sequence = finish(xt.values(), &attended, w)?;
    Ok(FusionOutput::from_sequence(sequence, None))
}

/// Cross-attention connector: token queries, projected-grid keys and values.
pub fn cross_attention_forward(
    xt: &TokenEmbeddings,
    xv: &GridEmbeddings,
    w: &BaselineWeights,
) -> Result<FusionOutput> {
    check_inputs(xt, xv, w)?;
    if xv.grids() == 0 {
        return Err(CmmError::param("cross-attention needs at least one grid")).stage("inputs");
    }
    let grids = w.projector.apply(xv.values()).stage("grid projector")?;
    let attended =
        multi_head_attention(xt.values(), &grids, &w.attention).stage("cross-attention")?;
    let sequence = finish(xt.values(), &attended, w)?;
    Ok(FusionOutput::from_sequence(sequence, None))
}
