//! The invariant suite behind `bench verify`: the backend × connector × k
//! ablation grid plus the structural properties of each stage.

use std::fmt;

use cmm_core::film::{film_in, film_out, Modulation};
use cmm_core::fixtures::{decode_bundle, encode_bundle, normal_matrix};
use cmm_core::layers::LN_EPS;
use cmm_core::numeric::layer_norm;
use cmm_core::ssm::{ssm_convolve, ssm_scan_recurrent};
use cmm_core::{
    cmm_forward, generate_weights, CmmConfig, FusionOutput, Matrix, SsmBackendChoice, SsmParams,
};
use serde::Serialize;

use crate::error::Result;
use crate::record::Connector;
use crate::sweep::{output_digest, PreparedPoint};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: impl Into<String>, outcome: std::result::Result<String, String>) {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(CheckResult {
            name: name.into(),
            passed,
            detail,
        });
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerifyOptions {
    pub tokens: usize,
    pub grids: usize,
    pub d_model: usize,
    pub heads: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            tokens: 16,
            grids: 5,
            d_model: 32,
            heads: 4,
            seed: 7,
        }
    }
}

type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn output_invariants(out: &FusionOutput, cfg: &CmmConfig) -> std::result::Result<(), String> {
    ensure(out.sequence.shape() == (cfg.tokens, cfg.d_text), || {
        format!("sequence shape {:?}", out.sequence.shape())
    })?;
    ensure(out.sequence.is_finite() && out.pooled.iter().all(|v| v.is_finite()), || {
        "non-finite output".into()
    })?;
    let means = out.sequence.column_means();
    let gap = means
        .iter()
        .zip(&out.pooled)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    ensure(gap <= 1e-10, || format!("pooled differs from column mean by {gap:e}"))?;
    if let Some(scores) = &out.scores {
        scores.check_invariants(1e-9).map_err(|e| e.to_string())?;
        ensure(scores.top_k == cfg.top_k, || format!("scores keep {} grids", scores.top_k))?;
    }
    Ok(())
}

fn ablation_cell(connector: Connector, cfg: &CmmConfig, seed: u64) -> Outcome {
    let point = PreparedPoint::new(connector, cfg.clone(), seed).map_err(|e| e.to_string())?;
    let first = point.forward().map_err(|e| e.to_string())?;
    output_invariants(&first, cfg)?;
    let again = point.forward().map_err(|e| e.to_string())?;
    let digest = output_digest(&first);
    ensure(digest == output_digest(&again), || "repeat call changed the output".into())?;
    Ok(format!("ok, digest {}", &digest[..16]))
}

fn gate_off(opts: &VerifyOptions) -> Outcome {
    let mut worst = 0.0f64;
    for s in 0..20 {
        let seed = opts.seed.wrapping_add(s);
        let d = opts.d_model;
        let x = normal_matrix(opts.tokens, d, seed, 0);
        let m = Modulation {
            gamma: normal_matrix(opts.tokens, d, seed, 1),
            beta: normal_matrix(opts.tokens, d, seed, 2),
        };
        let (ones, zeros) = (vec![1.0; d], vec![0.0; d]);
        let ln = layer_norm(&x, &ones, &zeros, LN_EPS).map_err(|e| e.to_string())?;
        let fin = film_in(&x, &m, 0.0, &ones, &zeros).map_err(|e| e.to_string())?;
        let fout = film_out(&x, &m, 0.0).map_err(|e| e.to_string())?;
        worst = worst.max(fin.max_abs_diff(&ln)).max(fout.max_abs_diff(&x));
    }
    ensure(worst <= 1e-15, || format!("max deviation {worst:e}"))?;
    Ok(format!("20 fixtures, max deviation {worst:e}"))
}

fn lti_params(d: usize, seed: u64) -> std::result::Result<cmm_core::DiagonalSsmParams, String> {
    let cfg = CmmConfig::new(1, 1, d).with_heads(1).with_top_k(1);
    match generate_weights(&cfg, seed).map_err(|e| e.to_string())?.ssm {
        SsmParams::DiagonalLti(p) => Ok(p),
        SsmParams::SelectiveScan(_) => Err("expected the diagonal backend".into()),
    }
}

fn mode_equivalence(opts: &VerifyOptions) -> Outcome {
    let p = lti_params(opts.d_model, opts.seed)?;
    let mut worst = 0.0f64;
    for t in [1usize, 7, 64, 257] {
        let x = normal_matrix(t, opts.d_model, opts.seed, t as u64);
        let rec = ssm_scan_recurrent(&x, &p).map_err(|e| e.to_string())?;
        let conv = ssm_convolve(&x, &p).map_err(|e| e.to_string())?;
        worst = worst.max(rec.max_abs_diff(&conv));
    }
    ensure(worst <= 1e-6, || format!("max deviation {worst:e}"))?;
    Ok(format!("T in {{1, 7, 64, 257}}, max deviation {worst:e}"))
}

fn causality(opts: &VerifyOptions) -> Outcome {
    for backend in SsmBackendChoice::ALL {
        let cfg = CmmConfig::new(opts.tokens, opts.grids, opts.d_model).with_backend(backend);
        let ssm = generate_weights(&cfg, opts.seed).map_err(|e| e.to_string())?.ssm;
        let x = normal_matrix(opts.tokens, opts.d_model, opts.seed, 9);
        let base = ssm.apply(&x).map_err(|e| e.to_string())?;
        let cut = opts.tokens / 2;
        let mut zeroed = x.clone();
        for t in cut..opts.tokens {
            zeroed.row_mut(t).fill(0.0);
        }
        let y = ssm.apply(&zeroed).map_err(|e| e.to_string())?;
        ensure(base.slice_rows(0, cut) == y.slice_rows(0, cut), || {
            format!("{backend}: past outputs moved")
        })?;
    }
    Ok("both backends, past rows bit-identical".into())
}

fn linearity(opts: &VerifyOptions) -> Outcome {
    let p = lti_params(opts.d_model, opts.seed)?;
    let a = normal_matrix(opts.tokens, opts.d_model, opts.seed, 10);
    let b = normal_matrix(opts.tokens, opts.d_model, opts.seed, 11);
    let run = |m: &Matrix| ssm_scan_recurrent(m, &p).map_err(|e| e.to_string());
    let mix = a.scale(1.5).add(&b.scale(-0.75)).map_err(|e| e.to_string())?;
    let lhs = run(&mix)?;
    let rhs = run(&a)?.scale(1.5).add(&run(&b)?.scale(-0.75)).map_err(|e| e.to_string())?;
    let gap = lhs.max_abs_diff(&rhs);
    ensure(gap <= 1e-8, || format!("superposition gap {gap:e}"))?;
    Ok(format!("superposition gap {gap:e}"))
}

fn bundle_roundtrip(opts: &VerifyOptions) -> Outcome {
    let cfg = CmmConfig::new(opts.tokens, opts.grids, opts.d_model).with_heads(opts.heads);
    let w = generate_weights(&cfg, opts.seed).map_err(|e| e.to_string())?;
    let bytes = encode_bundle(&w, &cfg, opts.seed).map_err(|e| e.to_string())?;
    let loaded = decode_bundle(&bytes).map_err(|e| e.to_string())?;
    let inputs = cmm_core::generate_inputs(opts.tokens, opts.grids, opts.d_model, opts.d_model, opts.seed)
        .map_err(|e| e.to_string())?;
    let direct = cmm_forward(&inputs.xt, &inputs.xv, &w, &cfg).map_err(|e| e.to_string())?;
    let again = cmm_forward(&inputs.xt, &inputs.xv, &loaded.weights, loaded.config())
        .map_err(|e| e.to_string())?;
    ensure(output_digest(&direct) == output_digest(&again), || {
        "forward from the decoded bundle differs".into()
    })?;
    Ok(format!("{} byte bundle, forward bit-identical", bytes.len()))
}

/// Runs the whole suite. Individual failures are recorded, not raised.
pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let base = CmmConfig::new(opts.tokens, opts.grids, opts.d_model).with_heads(opts.heads);
    for backend in SsmBackendChoice::ALL {
        for k in 1..=opts.grids {
            let cfg = base.clone().with_backend(backend).with_top_k(k);
            report.push(
                format!("ablation cmm/{backend}/k={k}"),
                ablation_cell(Connector::Cmm, &cfg, opts.seed),
            );
        }
    }
    // The attention connectors have neither an SSM nor a top-k.
    for connector in [Connector::Prepend, Connector::CrossAttend] {
        report.push(
            format!("ablation {connector}"),
            ablation_cell(connector, &base, opts.seed),
        );
    }
    report.push("gate-off identity", gate_off(opts));
    report.push("ssm mode equivalence", mode_equivalence(opts));
    report.push("ssm causality", causality(opts));
    report.push("ssm linearity", linearity(opts));
    report.push("bundle roundtrip", bundle_roundtrip(opts));
    Ok(report)
}
