//! One pass/fail line per acceptance criterion. Runs sequentially so the
//! timing sweep has the machine to itself.

use std::io::Cursor;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use cmm_bench::{fit_slope, group_by_connector, parse_records, Connector, RecordFormat};
use cmm_core::correlation::{aggregate_context, apply_topk, correlate, split_heads};
use cmm_core::film::{film_in, film_out, Modulation};
use cmm_core::fixtures::normal_matrix;
use cmm_core::layers::LN_EPS;
use cmm_core::numeric::layer_norm;
use cmm_core::ssm::{ssm_convolve, ssm_scan_recurrent};
use cmm_core::{
    cmm_forward, cross_attention_forward, generate_baseline_weights, generate_inputs,
    generate_weights, prepend_forward, CmmConfig, FusionOutput, SsmBackendChoice, SsmParams,
};
use cmm_oracle as oracle;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn softmax_simplex() -> Outcome {
    let mut rows = 0;
    for case in 0..100u64 {
        let heads = [1, 2, 4, 8][case as usize % 4];
        let tokens = 1 + (case as usize * 7) % 64;
        let grids = 1 + (case as usize * 3) % 8;
        let k = 1 + (case as usize * 5) % grids;
        let xt = normal_matrix(tokens, heads * 8, case, 0).scale(1.5);
        let xv = normal_matrix(grids, heads * 8, case, 1);
        let s = correlate(&split_heads(&xt, heads).map_err(err)?, &split_heads(&xv, heads).map_err(err)?)
            .map_err(err)?;
        let s = apply_topk(s, k).map_err(err)?;
        for h in 0..heads {
            for t in 0..tokens {
                let raw: f64 = s.scores.lane(h, t).iter().sum();
                let kept = s.renormalized.lane(h, t);
                let sum: f64 = kept.iter().sum();
                let nonzero = kept.iter().filter(|&&v| v != 0.0).count();
                check((raw - 1.0).abs() <= 1e-9 && (sum - 1.0).abs() <= 1e-9, || {
                    format!("case {case}: row sums {raw}, {sum}")
                })?;
                check(nonzero == k, || format!("case {case}: {nonzero} nonzeros, k = {k}"))?;
                rows += 1;
            }
        }
    }
    Ok(format!("100 configs, {rows} rows"))
}

fn gate_off_identity() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (t, d) = (3 + seed as usize, 8 + 8 * (seed as usize % 4));
        let x = normal_matrix(t, d, seed, 0).scale(2.0);
        let m = Modulation {
            gamma: normal_matrix(t, d, seed, 1).scale(5.0),
            beta: normal_matrix(t, d, seed, 2).scale(5.0),
        };
        let gamma: Vec<f64> = (0..d).map(|i| 1.0 + 0.01 * i as f64).collect();
        let beta: Vec<f64> = (0..d).map(|i| 0.02 * i as f64).collect();
        let ln = layer_norm(&x, &gamma, &beta, LN_EPS).map_err(err)?;
        worst = worst
            .max(film_in(&x, &m, 0.0, &gamma, &beta).map_err(err)?.max_abs_diff(&ln))
            .max(film_out(&x, &m, 0.0).map_err(err)?.max_abs_diff(&x));
    }
    check(worst <= 1e-15, || format!("max deviation {worst:e}"))?;
    Ok(format!("20 fixtures, max deviation {worst:e}"))
}

fn topk_degeneracies() -> Outcome {
    let xt = normal_matrix(24, 32, 3, 0);
    let xv = normal_matrix(5, 32, 3, 1);
    let s = correlate(&split_heads(&xt, 4).map_err(err)?, &split_heads(&xv, 4).map_err(err)?)
        .map_err(err)?;
    let unmasked = aggregate_context(&s, &xv).map_err(err)?;
    let full = aggregate_context(&apply_topk(s.clone(), 5).map_err(err)?, &xv).map_err(err)?;
    let gap = full.max_abs_diff(&unmasked);
    check(gap <= 1e-12, || format!("k = G deviates by {gap:e}"))?;
    let one = apply_topk(s, 1).map_err(err)?;
    for h in 0..4 {
        for t in 0..24 {
            let row = one.renormalized.lane(h, t);
            check(
                row.iter().filter(|&&v| v == 1.0).count() == 1 && row.iter().filter(|&&v| v == 0.0).count() == 4,
                || format!("k = 1 row ({h}, {t}) is not one-hot: {row:?}"),
            )?;
        }
    }
    let inputs = generate_inputs(16, 5, 32, 32, 3).map_err(err)?;
    for backend in SsmBackendChoice::ALL {
        for k in 1..=5 {
            let cfg = CmmConfig::new(16, 5, 32).with_top_k(k).with_backend(backend);
            let w = generate_weights(&cfg, 3).map_err(err)?;
            cmm_forward(&inputs.xt, &inputs.xv, &w, &cfg).map_err(|e| format!("{backend} k={k}: {e}"))?;
        }
    }
    Ok(format!("k = G gap {gap:e}, k = 1 one-hot, k in 1..=5 ran on both backends"))
}

fn ssm_mode_equivalence() -> Outcome {
    let cfg = CmmConfig::new(1, 5, 32).with_state_size(16);
    let SsmParams::DiagonalLti(p) = generate_weights(&cfg, 4).map_err(err)?.ssm else {
        return Err("expected the diagonal backend".into());
    };
    let mut worst = 0.0f64;
    for t in [1usize, 7, 64, 257, 2048] {
        let x = normal_matrix(t, 32, 4, t as u64);
        let rec = ssm_scan_recurrent(&x, &p).map_err(err)?;
        let conv = ssm_convolve(&x, &p).map_err(err)?;
        worst = worst.max(rec.max_abs_diff(&conv));
    }
    check(worst <= 1e-6, || format!("max deviation {worst:e}"))?;
    Ok(format!("T in {{1, 7, 64, 257, 2048}}, max deviation {worst:e}"))
}

struct Fixture {
    cfg: CmmConfig,
    seed: u64,
}

fn fixtures() -> Vec<Fixture> {
    let mut out = Vec::new();
    for (i, &t) in [1usize, 2, 16, 64, 128].iter().cycle().take(20).enumerate() {
        let grids = if i % 3 == 0 { 1 } else { 5 };
        let heads = if i % 2 == 0 { 1 } else { 4 };
        let d = if i % 4 < 2 { 16 } else { 32 };
        let cfg = CmmConfig::new(t, grids, d)
            .with_heads(heads)
            .with_top_k(1 + i % grids)
            .with_backend(SsmBackendChoice::ALL[(i / 5) % 2])
            .with_state_size(8);
        out.push(Fixture { cfg, seed: 1000 + i as u64 });
    }
    out
}

fn pooled_gap(out: &FusionOutput) -> f64 {
    oracle::mean_rows(&oracle::rows(&out.sequence))
        .iter()
        .zip(&out.pooled)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}

/// Runs every connector on every fixture, returning the worst oracle gap
/// and the worst pooled-vs-mean gap per connector.
fn connector_sweep() -> Result<[(f64, f64); 3], String> {
    let mut worst = [(0.0f64, 0.0f64); 3];
    for f in fixtures() {
        let c = &f.cfg;
        let inp = generate_inputs(c.tokens, c.grids, c.d_text, c.d_vision, f.seed).map_err(err)?;
        let (xt, xv) = (oracle::rows(inp.xt.values()), oracle::rows(inp.xv.values()));
        let w = generate_weights(c, f.seed).map_err(err)?;
        let out = cmm_forward(&inp.xt, &inp.xv, &w, c).map_err(err)?;
        let want = oracle::cmm(&xt, &xv, &w, c);
        worst[0].0 = worst[0].0.max(oracle::max_abs(&oracle::rows(&out.sequence), &want.sequence));
        worst[0].1 = worst[0].1.max(pooled_gap(&out));

        let bw = generate_baseline_weights(c, f.seed).map_err(err)?;
        let out = prepend_forward(&inp.xt, &inp.xv, &bw).map_err(err)?;
        let (seq, _) = oracle::prepend(&xt, &xv, &bw);
        worst[1].0 = worst[1].0.max(oracle::max_abs(&oracle::rows(&out.sequence), &seq));
        worst[1].1 = worst[1].1.max(pooled_gap(&out));

        let out = cross_attention_forward(&inp.xt, &inp.xv, &bw).map_err(err)?;
        let (seq, _) = oracle::cross_attention(&xt, &xv, &bw);
        worst[2].0 = worst[2].0.max(oracle::max_abs(&oracle::rows(&out.sequence), &seq));
        worst[2].1 = worst[2].1.max(pooled_gap(&out));
    }
    Ok(worst)
}

fn oracle_equivalence() -> Outcome {
    let worst = connector_sweep()?;
    let names = ["cmm", "prepend", "cross_attend"];
    for (name, (gap, _)) in names.iter().zip(worst) {
        check(gap <= 1e-8, || format!("{name} deviates by {gap:e}"))?;
    }
    Ok(format!(
        "20 configs, max deviation cmm {:e}, prepend {:e}, cross_attend {:e}",
        worst[0].0, worst[1].0, worst[2].0
    ))
}

fn causality_and_linearity() -> Outcome {
    for backend in SsmBackendChoice::ALL {
        let cfg = CmmConfig::new(64, 5, 16).with_backend(backend);
        let ssm = generate_weights(&cfg, 6).map_err(err)?.ssm;
        let x = normal_matrix(64, 16, 6, 0);
        let base = ssm.apply(&x).map_err(err)?;
        for cut in [1usize, 17, 63] {
            let mut z = x.clone();
            for t in cut..64 {
                z.row_mut(t).fill(0.0);
            }
            let y = ssm.apply(&z).map_err(err)?;
            check(y.slice_rows(0, cut) == base.slice_rows(0, cut), || {
                format!("{backend}: rows before {cut} moved")
            })?;
        }
    }
    let cfg = CmmConfig::new(64, 5, 16);
    let SsmParams::DiagonalLti(p) = generate_weights(&cfg, 6).map_err(err)?.ssm else {
        return Err("expected the diagonal backend".into());
    };
    let (a, b) = (normal_matrix(64, 16, 6, 1), normal_matrix(64, 16, 6, 2));
    let lhs = ssm_scan_recurrent(&a.scale(0.7).add(&b.scale(-2.5)).map_err(err)?, &p).map_err(err)?;
    let rhs = ssm_scan_recurrent(&a, &p)
        .map_err(err)?
        .scale(0.7)
        .add(&ssm_scan_recurrent(&b, &p).map_err(err)?.scale(-2.5))
        .map_err(err)?;
    let gap = lhs.max_abs_diff(&rhs);
    check(gap <= 1e-8, || format!("superposition gap {gap:e}"))?;
    Ok(format!("both backends causal, superposition gap {gap:e}"))
}

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bench"))
}

fn complexity() -> Outcome {
    let out = bench()
        .args([
            "sweep",
            "--connector",
            "cmm,prepend",
            "--T",
            "256,512,1024,2048,4096,8192",
            "--G",
            "5",
            "--D",
            "64",
            "--repeats",
            "5",
            "--warmup",
            "2",
        ])
        .output()
        .map_err(err)?;
    check(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let records = parse_records(Cursor::new(out.stdout), RecordFormat::Csv).map_err(err)?;
    let mut slopes = Vec::new();
    for (connector, group) in group_by_connector(&records) {
        let inversions = group
            .windows(2)
            .filter(|w| w[1].wall_ns_median < w[0].wall_ns_median)
            .count();
        check(inversions <= 1, || format!("{connector}: {inversions} timing inversions"))?;
        slopes.push((connector, fit_slope(&group).map_err(err)?));
    }
    let get = |c: Connector| slopes.iter().find(|(k, _)| *k == c).map(|(_, r)| r.clone());
    let cmm = get(Connector::Cmm).ok_or("no cmm records")?;
    let prepend = get(Connector::Prepend).ok_or("no prepend records")?;
    let detail = format!(
        "cmm slope {:.3} (R² {:.4}), prepend slope {:.3} (R² {:.4})",
        cmm.slope, cmm.r_squared, prepend.slope, prepend.r_squared
    );
    check((0.9..=1.3).contains(&cmm.slope), || format!("{detail}: cmm outside [0.9, 1.3]"))?;
    check(cmm.r_squared >= 0.98, || format!("{detail}: cmm R² below 0.98"))?;
    check(prepend.slope - cmm.slope >= 0.5, || format!("{detail}: separation below 0.5"))?;
    Ok(detail)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut runs = Vec::new();
    for name in ["first.cmmw", "second.cmmw"] {
        let path = dir.path().join(name);
        let out = bench()
            .args(["gen-fixtures", "--T", "32", "--D", "32", "--seed", "20260101", "--out"])
            .arg(&path)
            .output()
            .map_err(err)?;
        check(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(err)?;
        runs.push((v, std::fs::read(&path).map_err(err)?));
    }
    let (a, b) = (&runs[0], &runs[1]);
    check(a.1 == b.1, || "bundle files differ between processes".into())?;
    for key in ["bundle_sha256", "forward_digest", "roundtrip_forward_digest"] {
        check(a.0[key] == b.0[key], || format!("{key} differs between processes"))?;
    }
    check(a.0["forward_digest"] == a.0["roundtrip_forward_digest"], || {
        "loaded bundle changes the forward pass".into()
    })?;
    Ok(format!(
        "two processes, forward digest {}",
        a.0["forward_digest"].as_str().unwrap_or_default()
    ))
}

fn pooled_consistency() -> Outcome {
    let worst = connector_sweep()?;
    let gap = worst.iter().fold(0.0f64, |m, w| m.max(w.1));
    check(gap <= 1e-10, || format!("pooled gap {gap:e}"))?;
    Ok(format!("60 outputs across 3 connectors, max gap {gap:e}"))
}

fn ablation_matrix() -> Outcome {
    let out = bench().arg("verify").output().map_err(err)?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    check(out.status.success(), || {
        stdout.lines().filter(|l| l.starts_with("FAIL")).collect::<Vec<_>>().join("; ")
    })?;
    let cells = stdout.lines().filter(|l| l.starts_with("PASS ablation")).count();
    check(cells == 12, || format!("{cells} ablation cells reported"))?;
    Ok(stdout.lines().last().unwrap_or_default().to_owned())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("softmax simplex", softmax_simplex, Some(Duration::from_secs(5))),
        ("gate-off identity", gate_off_identity, None),
        ("top-k degeneracies", topk_degeneracies, None),
        ("ssm mode equivalence", ssm_mode_equivalence, Some(Duration::from_secs(30))),
        ("oracle equivalence", oracle_equivalence, Some(Duration::from_secs(60))),
        ("causality and linearity", causality_and_linearity, None),
        ("near-linear scaling", complexity, Some(Duration::from_secs(600))),
        ("cross-process determinism", determinism, None),
        ("pooled consistency", pooled_consistency, None),
        ("ablation matrix", ablation_matrix, None),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let mut outcome = run();
        let elapsed = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&outcome, budget) {
            if elapsed > limit {
                outcome = Err(format!("{detail}; took {elapsed:.1?}, budget {limit:?}"));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{elapsed:.2?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
