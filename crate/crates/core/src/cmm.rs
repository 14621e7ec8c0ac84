//! The cross-modal modulator forward pass.
//!
//! Stage order: shared projection → head split → token-grid correlation →
//! per-head top-k → head-averaged context `c` → FiLM-in → SSM → FiLM-out →
//! residual with the raw tokens + FFN + LN → mean pool.

use crate::correlation::{
    aggregate_context, apply_topk, correlate, project_shared, split_heads, CorrelationConfig,
    CorrelationScores, CorrelationWeights, GridEmbeddings, TokenEmbeddings,
};
use crate::error::{CmmError, Result, StageExt};
use crate::film::{film_generate, film_in, film_out, FilmWeights};
use crate::layers::{FeedForward, LayerNormParams};
use crate::numeric::Matrix;
use crate::ssm::{SsmBackendChoice, SsmParams};

pub const DEFAULT_GRIDS: usize = 5;
pub const DEFAULT_TOP_K: usize = 4;
pub const DEFAULT_HEADS: usize = 4;
pub const DEFAULT_STATE_SIZE: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CmmConfig {
    pub tokens: usize,
    pub grids: usize,
    pub d_text: usize,
    pub d_vision: usize,
    pub d_shared: usize,
    pub heads: usize,
    pub top_k: usize,
    pub backend: SsmBackendChoice,
    pub ffn_hidden: usize,
    pub state_size: usize,
    /// Whether callers want the pooled vector (default) or the full sequence.
    pub pool_output: bool,
}

impl CmmConfig {
    /// Square configuration: text, vision and shared widths all equal `d_model`.
    pub fn new(tokens: usize, grids: usize, d_model: usize) -> Self {
        Self {
            tokens,
            grids,
            d_text: d_model,
            d_vision: d_model,
            d_shared: d_model,
            heads: DEFAULT_HEADS,
            top_k: DEFAULT_TOP_K.min(grids.max(1)),
            backend: SsmBackendChoice::DiagonalLti,
            ffn_hidden: 4 * d_model,
            state_size: DEFAULT_STATE_SIZE,
            pool_output: true,
        }
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn with_top_k(mut self, k: usize) -> Self {
        self.top_k = k;
        self
    }

    pub fn with_backend(mut self, backend: SsmBackendChoice) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_state_size(mut self, n: usize) -> Self {
        self.state_size = n;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_shared / self.heads.max(1)
    }

    pub fn correlation(&self) -> CorrelationConfig {
        CorrelationConfig {
            heads: self.heads,
            head_dim: self.head_dim(),
            top_k: self.top_k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens == 0 || self.grids == 0 {
            return Err(CmmError::param("tokens and grids must be positive"));
        }
        if self.d_text == 0 || self.d_vision == 0 || self.d_shared == 0 {
            return Err(CmmError::param("channel widths must be positive"));
        }
        if self.heads == 0 || !self.d_shared.is_multiple_of(self.heads) {
            return Err(CmmError::param(format!(
                "shared width {} is not divisible by {} heads",
                self.d_shared, self.heads
            )));
        }
        if self.ffn_hidden < self.d_text {
            return Err(CmmError::param(format!(
                "ffn_hidden {} must be at least d_text {}",
                self.ffn_hidden, self.d_text
            )));
        }
        if self.state_size == 0 {
            return Err(CmmError::param("state size must be positive"));
        }
        self.correlation().validate(self.grids)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmmWeights {
    pub correlation: CorrelationWeights,
    pub film: FilmWeights,
    pub ssm: SsmParams,
    pub ffn: FeedForward,
    pub out_ln: LayerNormParams,
}

impl CmmWeights {
    /// Checks every tensor shape against `cfg`.
    pub fn check_shapes(&self, cfg: &CmmConfig) -> Result<()> {
        let expect = |name: &str, m: &Matrix, want: (usize, usize)| -> Result<()> {
            if m.shape() != want {
                return Err(CmmError::param(format!(
                    "weight `{name}` has shape {:?}, expected {want:?}",
                    m.shape()
                )));
            }
            Ok(())
        };
        let expect_len = |name: &str, v: &[f64], want: usize| -> Result<()> {
            if v.len() != want {
                return Err(CmmError::param(format!(
                    "weight `{name}` has length {}, expected {want}",
                    v.len()
                )));
            }
            Ok(())
        };
        let (dt, ds) = (cfg.d_text, cfg.d_shared);
        expect("corr.w_text", &self.correlation.w_text, (dt, ds))?;
        expect("corr.w_vision", &self.correlation.w_vision, (cfg.d_vision, ds))?;
        expect("film.w_in", &self.film.w_in, (ds, 2 * dt))?;
        expect("film.w_out", &self.film.w_out, (ds, 2 * dt))?;
        expect_len("film.ln_gamma", &self.film.ln_gamma, dt)?;
        expect_len("film.ln_beta", &self.film.ln_beta, dt)?;
        if self.ssm.backend() != cfg.backend {
            return Err(CmmError::param(format!(
                "weights carry a {} SSM but the config asks for {}",
                self.ssm.backend(),
                cfg.backend
            )));
        }
        match &self.ssm {
            SsmParams::DiagonalLti(p) => {
                p.validate()?;
                if p.channels() != dt || p.state_size() != cfg.state_size {
                    return Err(CmmError::param("diagonal SSM dims disagree with the config"));
                }
            }
            SsmParams::SelectiveScan(p) => {
                p.validate()?;
                if p.channels() != dt || p.state_size() != cfg.state_size {
                    return Err(CmmError::param("selective scan dims disagree with the config"));
                }
            }
        }
        expect("ffn.w1", &self.ffn.w1, (dt, cfg.ffn_hidden))?;
        expect_len("ffn.b1", &self.ffn.b1, cfg.ffn_hidden)?;
        expect("ffn.w2", &self.ffn.w2, (cfg.ffn_hidden, dt))?;
        expect_len("ffn.b2", &self.ffn.b2, dt)?;
        expect_len("out_ln.gamma", &self.out_ln.gamma, dt)?;
        expect_len("out_ln.beta", &self.out_ln.beta, dt)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutput {
    /// Token-level output, `[T, D_t]`.
    pub sequence: Matrix,
    /// Mean of `sequence` over tokens.
    pub pooled: Vec<f64>,
    /// Correlation scores; empty for the baselines, which have none.
    pub scores: Option<CorrelationScores>,
}

impl FusionOutput {
    pub(crate) fn from_sequence(sequence: Matrix, scores: Option<CorrelationScores>) -> Self {
        let pooled = sequence.column_means();
        Self {
            sequence,
            pooled,
            scores,
        }
    }

    /// The representation a caller asked for: pooled `[1, D_t]` or the full
    /// sequence.
    pub fn representation(&self, pool_output: bool) -> Matrix {
        if pool_output {
            Matrix::row_vector(&self.pooled)
        } else {
            self.sequence.clone()
        }
    }
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct CmmTrace {
    pub text_proj: Matrix,
    pub grid_proj: Matrix,
    pub scores: CorrelationScores,
    pub context: Matrix,
    pub x_film: Matrix,
    pub y_ssm: Matrix,
    pub y_film: Matrix,
    pub output: FusionOutput,
}

/// Forward pass that keeps every intermediate.
pub fn cmm_forward_traced(
    xt: &TokenEmbeddings,
    xv: &GridEmbeddings,
    w: &CmmWeights,
    cfg: &CmmConfig,
) -> Result<CmmTrace> {
    cfg.validate().stage("config")?;
    if xt.channels() != cfg.d_text || xv.channels() != cfg.d_vision {
        return Err(CmmError::shape(
            "cmm_forward inputs",
            (xt.channels(), xv.channels()),
            (cfg.d_text, cfg.d_vision),
        ))
        .stage("inputs");
    }
    if cfg.top_k > xv.grids() {
        return Err(CmmError::param(format!(
            "top_k {} exceeds the {} grids supplied",
            cfg.top_k,
            xv.grids()
        )))
        .stage("inputs");
    }

    let (text_proj, grid_proj) =
        project_shared(xt, xv, &w.correlation).stage("shared projection")?;
    let text_heads = split_heads(&text_proj, cfg.heads).stage("split heads")?;
    let grid_heads = split_heads(&grid_proj, cfg.heads).stage("split heads")?;
    let scores = correlate(&text_heads, &grid_heads).stage("correlate")?;
    let scores = apply_topk(scores, cfg.top_k).stage("top-k")?;
    let context = aggregate_context(&scores, &grid_proj).stage("aggregate context")?;

    let m_in = film_generate(&context, &w.film.w_in).stage("film-in generate")?;
    let x_film = film_in(
        xt.values(),
        &m_in,
        w.film.alpha,
        &w.film.ln_gamma,
        &w.film.ln_beta,
    )
    .stage("film-in")?;

    let y_ssm = w.ssm.apply(&x_film).stage("ssm")?;

    let m_out = film_generate(&context, &w.film.w_out).stage("film-out generate")?;
    let y_film = film_out(&y_ssm, &m_out, w.film.alpha).stage("film-out")?;

    // Residual source is the raw token embedding, not the FiLM output.
    let residual = xt.values().add(&y_film).stage("residual")?;
    let refined = residual
        .add(&w.ffn.apply(&residual).stage("ffn")?)
        .stage("residual")?;
    let sequence = w.out_ln.apply(&refined).stage("output layer norm")?;

    let output = FusionOutput::from_sequence(sequence, Some(scores.clone()));
    Ok(CmmTrace {
        text_proj,
        grid_proj,
        scores,
        context,
        x_film,
        y_ssm,
        y_film,
        output,
    })
}

pub fn cmm_forward(
    xt: &TokenEmbeddings,
    xv: &GridEmbeddings,
    w: &CmmWeights,
    cfg: &CmmConfig,
) -> Result<FusionOutput> {
    cmm_forward_traced(xt, xv, w, cfg).map(|trace| trace.output)
}
