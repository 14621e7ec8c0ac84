//! Seeded weights and synthetic inputs, plus the on-disk weight bundle.
//!
//! Every tensor is drawn from its own [`CounterRng`] stream, so the values
//! depend only on `(seed, tensor position, element index)`.
//!
//! Initialization:
//!
//! | tensor                         | scheme                                   |
//! |--------------------------------|------------------------------------------|
//! | projections, FFN, MLP (+bias)  | uniform(±1/√fan_in), fan_in = input rows |
//! | `film.alpha`                   | 0.1                                      |
//! | layer-norm gamma / beta        | 1 / 0                                    |
//! | `ssm.lambda_re` / `lambda_im`  | −1/2 / π·n                               |
//! | `ssm.b_re` / `b_im`            | 1 / 0                                    |
//! | `ssm.c_re`, `ssm.c_im`         | normal · √½                              |
//! | `ssm.d_skip` (diagonal)        | normal                                   |
//! | `ssm.log_dt`                   | uniform(ln 1e-3, ln 1e-1)                |
//! | `ssm.a_log` (selective)        | ln(n + 1)                                |
//! | `ssm.d_skip` (selective)       | 1                                        |

mod bundle;
pub mod rng;

pub use bundle::{
    decode_bundle, encode_bundle, load_bundle, save_bundle, Bundle, BundleHeader, TensorEntry,
    BUNDLE_MAGIC,
};
pub use rng::CounterRng;

use std::f64::consts::PI;

use crate::baseline::{AttentionWeights, BaselineWeights};
use crate::cmm::{CmmConfig, CmmWeights};
use crate::correlation::{CorrelationWeights, GridEmbeddings, TokenEmbeddings};
use crate::error::{CmmError, Result};
use crate::film::FilmWeights;
use crate::layers::{FeedForward, LayerNormParams};
use crate::numeric::Matrix;
use crate::ssm::{DiagonalSsmParams, SelectiveScanParams, SsmBackendChoice, SsmParams};

pub const ALPHA_INIT: f64 = 0.1;
pub const DT_MIN: f64 = 1e-3;
pub const DT_MAX: f64 = 1e-1;

/// Stream ids for synthetic inputs; weight tensors use their table position.
pub const TOKEN_STREAM: u64 = 0x1000_0000;
pub const GRID_STREAM: u64 = 0x1000_0001;
/// First stream id of the baseline weights.
pub const BASELINE_STREAM_BASE: u64 = 0x2000_0000;

/// A flat named tensor as it appears in a bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    fn matrix(name: &str, m: &Matrix) -> Self {
        Self {
            name: name.to_string(),
            shape: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        }
    }

    fn vector(name: &str, v: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            shape: vec![v.len()],
            data: v.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    FanIn(usize),
    Const(f64),
    Normal(f64),
    LogUniform(f64, f64),
    /// `π · column index`.
    PoleImag,
    /// `ln(column index + 1)`.
    LogRamp,
}

struct Slot {
    name: &'static str,
    shape: Vec<usize>,
    init: Init,
}

fn slot(name: &'static str, shape: &[usize], init: Init) -> Slot {
    Slot {
        name,
        shape: shape.to_vec(),
        init,
    }
}

/// Tensor table for a config, in bundle order.
fn layout(cfg: &CmmConfig) -> Vec<Slot> {
    let (dt, dv, ds, n, hid) = (
        cfg.d_text,
        cfg.d_vision,
        cfg.d_shared,
        cfg.state_size,
        cfg.ffn_hidden,
    );
    let mut slots = vec![
        slot("corr.w_text", &[dt, ds], Init::FanIn(dt)),
        slot("corr.w_vision", &[dv, ds], Init::FanIn(dv)),
        slot("film.w_in", &[ds, 2 * dt], Init::FanIn(ds)),
        slot("film.w_out", &[ds, 2 * dt], Init::FanIn(ds)),
        slot("film.alpha", &[1], Init::Const(ALPHA_INIT)),
        slot("film.ln_gamma", &[dt], Init::Const(1.0)),
        slot("film.ln_beta", &[dt], Init::Const(0.0)),
    ];
    match cfg.backend {
        SsmBackendChoice::DiagonalLti => slots.extend([
            slot("ssm.lambda_re", &[n], Init::Const(-0.5)),
            slot("ssm.lambda_im", &[n], Init::PoleImag),
            slot("ssm.b_re", &[n], Init::Const(1.0)),
            slot("ssm.b_im", &[n], Init::Const(0.0)),
            slot("ssm.c_re", &[dt, n], Init::Normal(0.5f64.sqrt())),
            slot("ssm.c_im", &[dt, n], Init::Normal(0.5f64.sqrt())),
            slot("ssm.d_skip", &[dt], Init::Normal(1.0)),
            slot("ssm.log_dt", &[dt], Init::LogUniform(DT_MIN, DT_MAX)),
        ]),
        SsmBackendChoice::SelectiveScan => slots.extend([
            slot("ssm.a_log", &[dt, n], Init::LogRamp),
            slot("ssm.w_delta", &[dt, dt], Init::FanIn(dt)),
            slot("ssm.w_b", &[dt, n], Init::FanIn(dt)),
            slot("ssm.w_c", &[dt, n], Init::FanIn(dt)),
            slot("ssm.d_skip", &[dt], Init::Const(1.0)),
        ]),
    }
    slots.extend([
        slot("ffn.w1", &[dt, hid], Init::FanIn(dt)),
        slot("ffn.b1", &[hid], Init::FanIn(dt)),
        slot("ffn.w2", &[hid, dt], Init::FanIn(hid)),
        slot("ffn.b2", &[dt], Init::FanIn(hid)),
        slot("out_ln.gamma", &[dt], Init::Const(1.0)),
        slot("out_ln.beta", &[dt], Init::Const(0.0)),
    ]);
    slots
}

fn fill(slot: &Slot, rng: &CounterRng) -> NamedTensor {
    let len: usize = slot.shape.iter().product();
    let cols = *slot.shape.last().unwrap_or(&1);
    let data = (0..len)
        .map(|i| {
            let c = i as u64;
            match slot.init {
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    rng.uniform_in(c, -bound, bound)
                }
                Init::Const(v) => v,
                Init::Normal(scale) => scale * rng.normal(c),
                Init::LogUniform(lo, hi) => rng.uniform_in(c, libm::log(lo), libm::log(hi)),
                Init::PoleImag => PI * (i % cols) as f64,
                Init::LogRamp => libm::log((i % cols) as f64 + 1.0),
            }
        })
        .collect();
    NamedTensor {
        name: slot.name.to_string(),
        shape: slot.shape.clone(),
        data,
    }
}

/// Seeded weights for `cfg`. Same `(cfg, seed)` gives bit-identical weights.
pub fn generate_weights(cfg: &CmmConfig, seed: u64) -> Result<CmmWeights> {
    cfg.validate()?;
    let tensors: Vec<NamedTensor> = layout(cfg)
        .iter()
        .enumerate()
        .map(|(i, s)| fill(s, &CounterRng::new(seed, i as u64)))
        .collect();
    weights_from_tensors(cfg, tensors)
}

/// Flattens weights into bundle order.
pub fn weights_to_tensors(w: &CmmWeights) -> Vec<NamedTensor> {
    let mut out = vec![
        NamedTensor::matrix("corr.w_text", &w.correlation.w_text),
        NamedTensor::matrix("corr.w_vision", &w.correlation.w_vision),
        NamedTensor::matrix("film.w_in", &w.film.w_in),
        NamedTensor::matrix("film.w_out", &w.film.w_out),
        NamedTensor::vector("film.alpha", &[w.film.alpha]),
        NamedTensor::vector("film.ln_gamma", &w.film.ln_gamma),
        NamedTensor::vector("film.ln_beta", &w.film.ln_beta),
    ];
    match &w.ssm {
        SsmParams::DiagonalLti(p) => out.extend([
            NamedTensor::vector("ssm.lambda_re", &p.lambda_re),
            NamedTensor::vector("ssm.lambda_im", &p.lambda_im),
            NamedTensor::vector("ssm.b_re", &p.b_re),
            NamedTensor::vector("ssm.b_im", &p.b_im),
            NamedTensor::matrix("ssm.c_re", &p.c_re),
            NamedTensor::matrix("ssm.c_im", &p.c_im),
            NamedTensor::vector("ssm.d_skip", &p.d_skip),
            NamedTensor::vector("ssm.log_dt", &p.log_dt),
        ]),
        SsmParams::SelectiveScan(p) => out.extend([
            NamedTensor::matrix("ssm.a_log", &p.a_log),
            NamedTensor::matrix("ssm.w_delta", &p.w_delta),
            NamedTensor::matrix("ssm.w_b", &p.w_b),
            NamedTensor::matrix("ssm.w_c", &p.w_c),
            NamedTensor::vector("ssm.d_skip", &p.d_skip),
        ]),
    }
    out.extend([
        NamedTensor::matrix("ffn.w1", &w.ffn.w1),
        NamedTensor::vector("ffn.b1", &w.ffn.b1),
        NamedTensor::matrix("ffn.w2", &w.ffn.w2),
        NamedTensor::vector("ffn.b2", &w.ffn.b2),
        NamedTensor::vector("out_ln.gamma", &w.out_ln.gamma),
        NamedTensor::vector("out_ln.beta", &w.out_ln.beta),
    ]);
    out
}

/// Rebuilds weights from a tensor list that must match the layout for `cfg`
/// name-for-name and shape-for-shape.
pub fn weights_from_tensors(cfg: &CmmConfig, tensors: Vec<NamedTensor>) -> Result<CmmWeights> {
    let expected = layout(cfg);
    if tensors.len() != expected.len() {
        return Err(CmmError::Format(format!(
            "expected {} tensors for this config, found {}",
            expected.len(),
            tensors.len()
        )));
    }
    for (t, s) in tensors.iter().zip(&expected) {
        if t.name != s.name || t.shape != s.shape {
            return Err(CmmError::Format(format!(
                "tensor `{}` {:?} does not match expected `{}` {:?}",
                t.name, t.shape, s.name, s.shape
            )));
        }
        if t.data.len() != t.shape.iter().product::<usize>() {
            return Err(CmmError::Format(format!("tensor `{}` has the wrong length", t.name)));
        }
    }

    let mut it = tensors.into_iter();
    let mut next_matrix = || -> Matrix {
        let t = it.next().expect("length checked above");
        let (r, c) = match t.shape[..] {
            [r, c] => (r, c),
            [n] => (1, n),
            _ => unreachable!("layout only holds rank-1 and rank-2 tensors"),
        };
        Matrix::new(r, c, t.data).expect("length checked above")
    };

    let correlation = CorrelationWeights {
        w_text: next_matrix(),
        w_vision: next_matrix(),
    };
    let film = FilmWeights {
        w_in: next_matrix(),
        w_out: next_matrix(),
        alpha: next_matrix().as_slice()[0],
        ln_gamma: next_matrix().into_vec(),
        ln_beta: next_matrix().into_vec(),
    };
    let ssm = match cfg.backend {
        SsmBackendChoice::DiagonalLti => SsmParams::DiagonalLti(DiagonalSsmParams {
            lambda_re: next_matrix().into_vec(),
            lambda_im: next_matrix().into_vec(),
            b_re: next_matrix().into_vec(),
            b_im: next_matrix().into_vec(),
            c_re: next_matrix(),
            c_im: next_matrix(),
            d_skip: next_matrix().into_vec(),
            log_dt: next_matrix().into_vec(),
        }),
        SsmBackendChoice::SelectiveScan => SsmParams::SelectiveScan(SelectiveScanParams {
            a_log: next_matrix(),
            w_delta: next_matrix(),
            w_b: next_matrix(),
            w_c: next_matrix(),
            d_skip: next_matrix().into_vec(),
        }),
    };
    let ffn = FeedForward {
        w1: next_matrix(),
        b1: next_matrix().into_vec(),
        w2: next_matrix(),
        b2: next_matrix().into_vec(),
    };
    let out_ln = LayerNormParams {
        gamma: next_matrix().into_vec(),
        beta: next_matrix().into_vec(),
    };
    let w = CmmWeights {
        correlation,
        film,
        ssm,
        ffn,
        out_ln,
    };
    w.check_shapes(cfg)?;
    Ok(w)
}

/// Seeded weights for the prepend and cross-attention connectors.
pub fn generate_baseline_weights(cfg: &CmmConfig, seed: u64) -> Result<BaselineWeights> {
    cfg.validate()?;
    let (dt, dv, hid) = (cfg.d_text, cfg.d_vision, cfg.ffn_hidden);
    let mlp_hidden = 2 * dt;
    let specs = [
        slot("projector.w1", &[dv, mlp_hidden], Init::FanIn(dv)),
        slot("projector.b1", &[mlp_hidden], Init::FanIn(dv)),
        slot("projector.w2", &[mlp_hidden, dt], Init::FanIn(mlp_hidden)),
        slot("projector.b2", &[dt], Init::FanIn(mlp_hidden)),
        slot("attn.wq", &[dt, dt], Init::FanIn(dt)),
        slot("attn.wk", &[dt, dt], Init::FanIn(dt)),
        slot("attn.wv", &[dt, dt], Init::FanIn(dt)),
        slot("attn.wo", &[dt, dt], Init::FanIn(dt)),
        slot("ffn.w1", &[dt, hid], Init::FanIn(dt)),
        slot("ffn.b1", &[hid], Init::FanIn(dt)),
        slot("ffn.w2", &[hid, dt], Init::FanIn(hid)),
        slot("ffn.b2", &[dt], Init::FanIn(hid)),
    ];
    let mut t = specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let nt = fill(s, &CounterRng::new(seed, BASELINE_STREAM_BASE + i as u64));
            let (r, c) = match nt.shape[..] {
                [r, c] => (r, c),
                [n] => (1, n),
                _ => unreachable!(),
            };
            Matrix::new(r, c, nt.data).expect("shape from layout")
        })
        .collect::<Vec<_>>()
        .into_iter();
    let mut next = || t.next().expect("fixed table");
    Ok(BaselineWeights {
        projector: FeedForward {
            w1: next(),
            b1: next().into_vec(),
            w2: next(),
            b2: next().into_vec(),
        },
        attention: AttentionWeights {
            wq: next(),
            wk: next(),
            wv: next(),
            wo: next(),
            heads: cfg.heads,
        },
        ffn: FeedForward {
            w1: next(),
            b1: next().into_vec(),
            w2: next(),
            b2: next().into_vec(),
        },
        out_ln: LayerNormParams::identity(dt),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticInputs {
    pub seed: u64,
    pub xt: TokenEmbeddings,
    pub xv: GridEmbeddings,
}

/// Standard-normal token and grid embeddings.
pub fn generate_inputs(
    tokens: usize,
    grids: usize,
    d_text: usize,
    d_vision: usize,
    seed: u64,
) -> Result<SyntheticInputs> {
    if tokens == 0 || grids == 0 || d_text == 0 || d_vision == 0 {
        return Err(CmmError::param("input dimensions must be positive"));
    }
    Ok(SyntheticInputs {
        seed,
        xt: TokenEmbeddings::new(normal_matrix(tokens, d_text, seed, TOKEN_STREAM))?,
        xv: GridEmbeddings::new(normal_matrix(grids, d_vision, seed, GRID_STREAM))?,
    })
}

/// A `[rows, cols]` matrix of standard normals from one stream.
pub fn normal_matrix(rows: usize, cols: usize, seed: u64, stream: u64) -> Matrix {
    let rng = CounterRng::new(seed, stream);
    Matrix::from_fn(rows, cols, |i, j| rng.normal((i * cols + j) as u64))
}
