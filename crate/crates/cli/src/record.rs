//! Timing records and their CSV / JSON-lines encodings.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use cmm_core::SsmBackendChoice;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connector {
    Cmm,
    Prepend,
    CrossAttend,
}

impl Connector {
    pub const ALL: [Connector; 3] = [Connector::Cmm, Connector::Prepend, Connector::CrossAttend];

    pub fn as_str(&self) -> &'static str {
        match self {
            Connector::Cmm => "cmm",
            Connector::Prepend => "prepend",
            Connector::CrossAttend => "cross_attend",
        }
    }

    /// Accepted log-log slope band for a sweep over `T`.
    pub fn slope_band(&self) -> (f64, f64) {
        match self {
            Connector::Cmm | Connector::CrossAttend => (0.9, 1.3),
            Connector::Prepend => (1.6, 2.4),
        }
    }

    pub fn uses_ssm(&self) -> bool {
        matches!(self, Connector::Cmm)
    }
}

impl fmt::Display for Connector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Connector {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cmm" => Ok(Connector::Cmm),
            "prepend" => Ok(Connector::Prepend),
            "cross_attend" | "cross-attend" | "cross" => Ok(Connector::CrossAttend),
            other => Err(HarnessError::usage(
                "connector",
                format!("unknown connector `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordFormat {
    Csv,
    JsonLines,
}

impl FromStr for RecordFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(RecordFormat::Csv),
            "jsonl" | "json-lines" | "jsonlines" | "ndjson" => Ok(RecordFormat::JsonLines),
            other => Err(HarnessError::usage("format", format!("unknown format `{other}`"))),
        }
    }
}

/// One timed sweep point. Field order is the column order on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub connector: Connector,
    /// Only the modulator has an SSM; empty for the attention connectors.
    pub backend: Option<SsmBackendChoice>,
    #[serde(rename = "T")]
    pub tokens: usize,
    #[serde(rename = "G")]
    pub grids: usize,
    #[serde(rename = "D_t")]
    pub d_text: usize,
    #[serde(rename = "H")]
    pub heads: usize,
    pub k: usize,
    pub repeats: usize,
    pub wall_ns_median: f64,
    pub wall_ns_p10: f64,
    pub wall_ns_p90: f64,
    pub tokens_per_sec: f64,
    pub seed: u64,
}

pub const CSV_COLUMNS: [&str; 13] = [
    "connector",
    "backend",
    "T",
    "G",
    "D_t",
    "H",
    "k",
    "repeats",
    "wall_ns_median",
    "wall_ns_p10",
    "wall_ns_p90",
    "tokens_per_sec",
    "seed",
];

pub fn emit_records<W: Write>(records: &[ScalingRecord], format: RecordFormat, out: W) -> Result<()> {
    match format {
        RecordFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            if records.is_empty() {
                w.write_record(CSV_COLUMNS)?;
            }
            for r in records {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        RecordFormat::JsonLines => {
            let mut out = out;
            for r in records {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

pub fn parse_records<R: BufRead>(input: R, format: RecordFormat) -> Result<Vec<ScalingRecord>> {
    match format {
        RecordFormat::Csv => {
            let mut r = csv::Reader::from_reader(input);
            let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
            if header != CSV_COLUMNS {
                return Err(HarnessError::usage(
                    "input",
                    format!("unexpected CSV header {}", header.join(",")),
                ));
            }
            r.deserialize().map(|row| row.map_err(Into::into)).collect()
        }
        RecordFormat::JsonLines => input
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|l| Ok(serde_json::from_str(&l?)?))
            .collect(),
    }
}
