use std::io::Cursor;

use cmm_bench::{
    emit_records, fit_slope, least_squares, measure_point, output_digest, parse_records,
    run_sweep, summarize, Connector, HarnessError, PreparedPoint, RecordFormat, ScalingRecord,
    SweepSpec, CSV_COLUMNS,
};
use cmm_core::fixtures::rng::CounterRng;
use cmm_core::{CmmConfig, SsmBackendChoice};
use cmm_oracle as oracle;

fn record(connector: Connector, tokens: usize, median: f64) -> ScalingRecord {
    ScalingRecord {
        connector,
        backend: connector.uses_ssm().then_some(SsmBackendChoice::DiagonalLti),
        tokens,
        grids: 5,
        d_text: 64,
        heads: 4,
        k: 4,
        repeats: 5,
        wall_ns_median: median,
        wall_ns_p10: median * 0.9,
        wall_ns_p90: median * 1.1,
        tokens_per_sec: 1.0,
        seed: 3,
    }
}

fn small_spec() -> SweepSpec {
    SweepSpec {
        connectors: vec![Connector::Cmm],
        tokens: vec![8],
        d_model: 16,
        repeats: 5,
        warmup: 2,
        ..SweepSpec::default()
    }
}

const SWEEP_T: [usize; 6] = [256, 512, 1024, 2048, 4096, 8192];

#[test]
fn exact_linear_data_fits_slope_one() {
    let rs: Vec<_> = SWEEP_T.iter().map(|&t| record(Connector::Cmm, t, 37.5 * t as f64)).collect();
    let r = fit_slope(&rs).unwrap();
    assert!((r.slope - 1.0).abs() <= 1e-9);
    assert!((r.r_squared - 1.0).abs() <= 1e-12);
    assert!(r.pass);
}

#[test]
fn exact_quadratic_data_fits_slope_two() {
    let rs: Vec<_> = SWEEP_T
        .iter()
        .map(|&t| record(Connector::Prepend, t, 0.25 * (t * t) as f64))
        .collect();
    let r = fit_slope(&rs).unwrap();
    assert!((r.slope - 2.0).abs() <= 1e-9);
    assert!(r.pass);
    let as_cmm: Vec<_> = rs.iter().map(|r| ScalingRecord { connector: Connector::Cmm, ..r.clone() }).collect();
    assert!(!fit_slope(&as_cmm).unwrap().pass);
}

#[test]
fn noisy_fit_matches_normal_equation_oracle() {
    let rng = CounterRng::new(99, 0);
    let rs: Vec<_> = SWEEP_T
        .iter()
        .enumerate()
        .map(|(i, &t)| record(Connector::Cmm, t, 50.0 * t as f64 * (1.0 + 0.1 * rng.normal(i as u64)).abs()))
        .collect();
    let r = fit_slope(&rs).unwrap();
    let x: Vec<f64> = rs.iter().map(|r| (r.tokens as f64).ln()).collect();
    let y: Vec<f64> = rs.iter().map(|r| r.wall_ns_median.ln()).collect();
    let (slope, intercept, r2) = oracle::ols(&x, &y);
    assert!((r.slope - slope).abs() <= 1e-10);
    assert!((r.intercept - intercept).abs() <= 1e-9);
    assert!((r.r_squared - r2).abs() <= 1e-10);
    assert_eq!(least_squares(&x, &y).0, r.slope);
}

#[test]
fn fit_rejects_short_or_unsorted_sweeps() {
    let rs: Vec<_> = SWEEP_T[..4].iter().map(|&t| record(Connector::Cmm, t, t as f64)).collect();
    assert!(matches!(fit_slope(&rs), Err(HarnessError::Usage { .. })));
    let mut rs: Vec<_> = SWEEP_T.iter().map(|&t| record(Connector::Cmm, t, t as f64)).collect();
    rs.swap(1, 2);
    assert!(fit_slope(&rs).is_err());
    rs.swap(1, 2);
    rs[3].connector = Connector::Prepend;
    assert!(fit_slope(&rs).is_err());
}

#[test]
fn one_record_is_two_csv_lines_with_exact_columns() {
    let mut buf = Vec::new();
    emit_records(&[record(Connector::Cmm, 256, 1000.0)], RecordFormat::Csv, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], CSV_COLUMNS.join(","));
    assert!(lines[1].starts_with("cmm,diagonal_lti,256,5,64,4,4,5,"));
    let mut buf = Vec::new();
    emit_records(&[record(Connector::Prepend, 256, 1000.0)], RecordFormat::Csv, &mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().lines().nth(1).unwrap().starts_with("prepend,,256,"));
}

#[test]
fn records_roundtrip_through_both_formats() {
    let rs = vec![
        record(Connector::Cmm, 256, 1234.5),
        record(Connector::Prepend, 512, 0.1 + 0.2),
        record(Connector::CrossAttend, 1024, 9.87654321e9),
    ];
    for format in [RecordFormat::Csv, RecordFormat::JsonLines] {
        let mut buf = Vec::new();
        emit_records(&rs, format, &mut buf).unwrap();
        assert_eq!(parse_records(Cursor::new(buf), format).unwrap(), rs);
    }
    let mut buf = Vec::new();
    emit_records(&rs[..1], RecordFormat::JsonLines, &mut buf).unwrap();
    let line = String::from_utf8(buf).unwrap();
    let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&line)
        .unwrap()
        .keys()
        .cloned()
        .collect();
    let mut want: Vec<String> = CSV_COLUMNS.iter().map(|s| s.to_string()).collect();
    want.sort();
    let mut keys = keys;
    keys.sort();
    assert_eq!(keys, want);
}

#[test]
fn summary_statistics_follow_from_the_samples() {
    let cfg = CmmConfig::new(128, 5, 16);
    let samples = [1_000_000u64, 1_200_000, 900_000, 1_100_000, 5_000_000];
    let r = summarize(Connector::Cmm, &cfg, 4, &samples).unwrap();
    assert_eq!(r.wall_ns_median, 1_100_000.0);
    assert!((r.wall_ns_p10 - 940_000.0).abs() < 1e-6);
    assert!((r.wall_ns_p90 - 3_480_000.0).abs() < 1e-6);
    assert!(r.wall_ns_p10 <= r.wall_ns_median && r.wall_ns_median <= r.wall_ns_p90);
    // Recompute throughput from emitted T and repeats plus the known total.
    let mut buf = Vec::new();
    emit_records(&[r], RecordFormat::Csv, &mut buf).unwrap();
    let back = &parse_records(Cursor::new(buf), RecordFormat::Csv).unwrap()[0];
    let total_s = samples.iter().sum::<u64>() as f64 * 1e-9;
    let want = (back.tokens * back.repeats) as f64 / total_s;
    assert!((back.tokens_per_sec - want).abs() / want <= 1e-3);
}

#[test]
fn one_point_sweep_yields_one_record_of_five_calls() {
    let rs = run_sweep(&small_spec()).unwrap();
    assert_eq!(rs.len(), 1);
    assert_eq!(rs[0].repeats, 5);
    assert!(rs[0].tokens_per_sec > 0.0);
}

#[test]
fn repeated_sweeps_agree_except_for_timing() {
    let spec = SweepSpec {
        connectors: Connector::ALL.to_vec(),
        tokens: vec![4, 8],
        ..small_spec()
    };
    let strip = |mut r: ScalingRecord| {
        r.wall_ns_median = 0.0;
        r.wall_ns_p10 = 0.0;
        r.wall_ns_p90 = 0.0;
        r.tokens_per_sec = 0.0;
        r
    };
    let a: Vec<_> = run_sweep(&spec).unwrap().into_iter().map(strip).collect();
    let b: Vec<_> = run_sweep(&SweepSpec { parallel: true, ..spec }).unwrap().into_iter().map(strip).collect();
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
}

#[test]
fn timing_does_not_change_outputs() {
    for connector in Connector::ALL {
        let point = PreparedPoint::new(connector, CmmConfig::new(12, 5, 16), 8).unwrap();
        let untimed = output_digest(&point.forward().unwrap());
        let timed = measure_point(&point, 5, 2).unwrap();
        assert_eq!(timed.digest, untimed);
        assert_eq!(timed.samples_ns.len(), 5);
    }
}

#[test]
fn invalid_specs_name_the_field() {
    let cases: Vec<(&str, SweepSpec)> = vec![
        ("repeats", SweepSpec { repeats: 4, ..small_spec() }),
        ("warmup", SweepSpec { warmup: 1, ..small_spec() }),
        ("T", SweepSpec { tokens: vec![], ..small_spec() }),
        ("k", SweepSpec { top_k: 6, ..small_spec() }),
        ("heads", SweepSpec { heads: 3, ..small_spec() }),
        ("connector", SweepSpec { connectors: vec![], ..small_spec() }),
    ];
    for (field, spec) in cases {
        match spec.validate() {
            Err(HarnessError::Usage { field: f, .. }) => assert_eq!(f, field),
            other => panic!("{field}: {other:?}"),
        }
    }
}
