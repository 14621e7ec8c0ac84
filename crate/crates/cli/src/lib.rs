//! Timing sweeps, scaling fits and the invariant suite for the fusion
//! connectors in `cmm-core`.

pub mod error;
pub mod fit;
pub mod record;
pub mod sweep;
pub mod verify;

pub use error::{HarnessError, Result};
pub use fit::{fit_slope, group_by_connector, least_squares, SlopeReport, MIN_FIT_POINTS};
pub use record::{emit_records, parse_records, Connector, RecordFormat, ScalingRecord, CSV_COLUMNS};
pub use sweep::{
    measure_point, output_digest, run_sweep, run_sweep_measurements, summarize, Measurement,
    PreparedPoint, SweepSpec, DEFAULT_REPEATS, DEFAULT_WARMUP,
};
pub use verify::{run_verify, CheckResult, VerifyOptions, VerifyReport};
