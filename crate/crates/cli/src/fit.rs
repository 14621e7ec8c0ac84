//! Log-log scaling fits over sweep records.

use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::record::{Connector, ScalingRecord};

pub const MIN_FIT_POINTS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeReport {
    pub connector: Connector,
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub band: (f64, f64),
    pub pass: bool,
}

/// Least-squares line through `(x, y)` using centred sums. Returns
/// `(slope, intercept, r²)`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r_squared)
}

/// Fits `ln(median wall time)` against `ln T` for one connector's sweep.
pub fn fit_slope(records: &[ScalingRecord]) -> Result<SlopeReport> {
    if records.len() < MIN_FIT_POINTS {
        return Err(HarnessError::usage(
            "records",
            format!("need at least {MIN_FIT_POINTS} points, got {}", records.len()),
        ));
    }
    let connector = records[0].connector;
    if records.iter().any(|r| r.connector != connector) {
        return Err(HarnessError::usage("records", "a fit covers a single connector"));
    }
    if records.windows(2).any(|w| w[1].tokens <= w[0].tokens) {
        return Err(HarnessError::usage("T", "sweep points must be strictly increasing"));
    }
    if records.iter().any(|r| r.wall_ns_median.is_nan() || r.wall_ns_median <= 0.0) {
        return Err(HarnessError::usage("wall_ns_median", "must be positive to take logs"));
    }
    let x: Vec<f64> = records.iter().map(|r| (r.tokens as f64).ln()).collect();
    let y: Vec<f64> = records.iter().map(|r| r.wall_ns_median.ln()).collect();
    let (slope, intercept, r_squared) = least_squares(&x, &y);
    let band = connector.slope_band();
    Ok(SlopeReport {
        connector,
        points: records.len(),
        slope,
        intercept,
        r_squared,
        band,
        pass: slope >= band.0 && slope <= band.1,
    })
}

/// Splits records into per-connector runs, keeping first-seen order.
pub fn group_by_connector(records: &[ScalingRecord]) -> Vec<(Connector, Vec<ScalingRecord>)> {
    let mut groups: Vec<(Connector, Vec<ScalingRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(c, _)| *c == r.connector) {
            Some((_, g)) => g.push(r.clone()),
            None => groups.push((r.connector, vec![r.clone()])),
        }
    }
    groups
}
