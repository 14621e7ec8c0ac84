//! Seeded sweep points and their timing.

use std::hint::black_box;
use std::time::Instant;

use cmm_core::fixtures::generate_inputs;
use cmm_core::{
    cmm_forward, cross_attention_forward, generate_baseline_weights, generate_weights,
    prepend_forward, BaselineWeights, CmmConfig, CmmWeights, FusionOutput, GridEmbeddings,
    SsmBackendChoice, TokenEmbeddings,
};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};
use crate::record::{Connector, ScalingRecord};

pub const DEFAULT_REPEATS: usize = 20;
pub const DEFAULT_WARMUP: usize = 3;
pub const MIN_REPEATS: usize = 5;
pub const MIN_WARMUP: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub connectors: Vec<Connector>,
    pub backend: SsmBackendChoice,
    pub tokens: Vec<usize>,
    pub grids: usize,
    pub d_model: usize,
    pub heads: usize,
    pub top_k: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Run independent points on separate threads. Timing inside a point
    /// stays single-threaded.
    pub parallel: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            connectors: vec![Connector::Cmm],
            backend: SsmBackendChoice::DiagonalLti,
            tokens: vec![256, 512, 1024, 2048, 4096, 8192],
            grids: 5,
            d_model: 64,
            heads: 4,
            top_k: 4,
            repeats: DEFAULT_REPEATS,
            warmup: DEFAULT_WARMUP,
            seed: 0,
            parallel: false,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.connectors.is_empty() {
            return Err(HarnessError::usage("connector", "at least one connector is required"));
        }
        if self.tokens.is_empty() || self.tokens.contains(&0) {
            return Err(HarnessError::usage("T", "needs one or more positive values"));
        }
        if self.grids == 0 {
            return Err(HarnessError::usage("G", "must be positive"));
        }
        if self.d_model == 0 {
            return Err(HarnessError::usage("D", "must be positive"));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(HarnessError::usage(
                "heads",
                format!("{} does not divide D = {}", self.heads, self.d_model),
            ));
        }
        if self.top_k == 0 || self.top_k > self.grids {
            return Err(HarnessError::usage(
                "k",
                format!("{} is outside 1..={}", self.top_k, self.grids),
            ));
        }
        if self.repeats < MIN_REPEATS {
            return Err(HarnessError::usage(
                "repeats",
                format!("{} is below the minimum of {MIN_REPEATS}", self.repeats),
            ));
        }
        if self.warmup < MIN_WARMUP {
            return Err(HarnessError::usage(
                "warmup",
                format!("{} is below the minimum of {MIN_WARMUP}", self.warmup),
            ));
        }
        Ok(())
    }

    pub fn config(&self, tokens: usize) -> CmmConfig {
        CmmConfig::new(tokens, self.grids, self.d_model)
            .with_heads(self.heads)
            .with_top_k(self.top_k)
            .with_backend(self.backend)
    }

    /// Every (connector, T) pair in emission order.
    pub fn points(&self) -> Vec<(Connector, usize)> {
        self.connectors
            .iter()
            .flat_map(|&c| self.tokens.iter().map(move |&t| (c, t)))
            .collect()
    }
}

#[derive(Clone, Debug)]
enum PointWeights {
    Cmm(Box<CmmWeights>),
    Baseline(Box<BaselineWeights>),
}

/// Fixtures for one sweep point, generated before any timing starts.
#[derive(Clone, Debug)]
pub struct PreparedPoint {
    pub connector: Connector,
    pub config: CmmConfig,
    pub seed: u64,
    xt: TokenEmbeddings,
    xv: GridEmbeddings,
    weights: PointWeights,
}

impl PreparedPoint {
    pub fn new(connector: Connector, config: CmmConfig, seed: u64) -> Result<Self> {
        let inputs = generate_inputs(
            config.tokens,
            config.grids,
            config.d_text,
            config.d_vision,
            seed,
        )?;
        let weights = match connector {
            Connector::Cmm => PointWeights::Cmm(Box::new(generate_weights(&config, seed)?)),
            _ => PointWeights::Baseline(Box::new(generate_baseline_weights(&config, seed)?)),
        };
        Ok(Self {
            connector,
            config,
            seed,
            xt: inputs.xt,
            xv: inputs.xv,
            weights,
        })
    }

    pub fn forward(&self) -> Result<FusionOutput> {
        let out = match (&self.weights, self.connector) {
            (PointWeights::Cmm(w), _) => cmm_forward(&self.xt, &self.xv, w, &self.config)?,
            (PointWeights::Baseline(w), Connector::Prepend) => prepend_forward(&self.xt, &self.xv, w)?,
            (PointWeights::Baseline(w), _) => cross_attention_forward(&self.xt, &self.xv, w)?,
        };
        Ok(out)
    }
}

/// SHA-256 over the little-endian bytes of the sequence, then the pooled
/// vector.
pub fn output_digest(out: &FusionOutput) -> String {
    let mut h = Sha256::new();
    for v in out.sequence.as_slice().iter().chain(&out.pooled) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Linear-interpolated percentile of sorted samples, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Builds the record for one point from its per-call wall times.
pub fn summarize(
    connector: Connector,
    config: &CmmConfig,
    seed: u64,
    samples_ns: &[u64],
) -> Result<ScalingRecord> {
    if samples_ns.is_empty() {
        return Err(HarnessError::usage("repeats", "no timed samples"));
    }
    let mut sorted: Vec<f64> = samples_ns.iter().map(|&s| s as f64).collect();
    sorted.sort_by(f64::total_cmp);
    // A zero total would only come from a broken clock; count it as 1 ns.
    let total_s = (samples_ns.iter().sum::<u64>().max(1)) as f64 * 1e-9;
    Ok(ScalingRecord {
        connector,
        backend: connector.uses_ssm().then_some(config.backend),
        tokens: config.tokens,
        grids: config.grids,
        d_text: config.d_text,
        heads: config.heads,
        k: config.top_k,
        repeats: samples_ns.len(),
        wall_ns_median: percentile(&sorted, 0.5),
        wall_ns_p10: percentile(&sorted, 0.1),
        wall_ns_p90: percentile(&sorted, 0.9),
        tokens_per_sec: (config.tokens * samples_ns.len()) as f64 / total_s,
        seed,
    })
}

/// A timed point plus the digest of the output its last timed call produced.
#[derive(Clone, Debug)]
pub struct Measurement {
    pub record: ScalingRecord,
    pub samples_ns: Vec<u64>,
    pub digest: String,
}

pub fn measure_point(point: &PreparedPoint, repeats: usize, warmup: usize) -> Result<Measurement> {
    for _ in 0..warmup {
        black_box(point.forward()?);
    }
    let mut samples_ns = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let out = black_box(point.forward()?);
        samples_ns.push(start.elapsed().as_nanos() as u64);
        last = Some(out);
    }
    let digest = last.as_ref().map(output_digest).unwrap_or_default();
    let record = summarize(point.connector, &point.config, point.seed, &samples_ns)?;
    Ok(Measurement {
        record,
        samples_ns,
        digest,
    })
}

fn run_one(spec: &SweepSpec, connector: Connector, tokens: usize) -> Result<Measurement> {
    let point = PreparedPoint::new(connector, spec.config(tokens), spec.seed)?;
    measure_point(&point, spec.repeats, spec.warmup)
}

/// Runs every point of `spec` and returns the measurements in emission order.
pub fn run_sweep_measurements(spec: &SweepSpec) -> Result<Vec<Measurement>> {
    spec.validate()?;
    let points = spec.points();
    if !spec.parallel {
        return points.iter().map(|&(c, t)| run_one(spec, c, t)).collect();
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut slots: Vec<Option<Result<Measurement>>> = (0..points.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_points, chunk_slots) in points
            .chunks(points.len().div_ceil(workers))
            .zip(slots.chunks_mut(points.len().div_ceil(workers)))
        {
            scope.spawn(move || {
                for (&(c, t), slot) in chunk_points.iter().zip(chunk_slots) {
                    *slot = Some(run_one(spec, c, t));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every point is assigned to a worker"))
        .collect()
}

pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<ScalingRecord>> {
    Ok(run_sweep_measurements(spec)?
        .into_iter()
        .map(|m| m.record)
        .collect())
}
