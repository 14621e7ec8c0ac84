//! Linear-time sequence mixers for the modulated text stream.
//!
//! Two backends:
//!
//! * [`DiagonalSsmParams`]: a time-invariant SSM with a diagonal complex state
//!   matrix shared across channels and a per-channel step size. It can be run
//!   as a recurrence ([`ssm_scan_recurrent`]) or as a causal convolution with
//!   its materialized kernel ([`ssm_kernel`], [`ssm_convolve`]); the two agree
//!   up to rounding.
//! * [`SelectiveScanParams`]: step size and input/output maps are functions
//!   of the current input, so only the recurrent form exists.
//!
//! Complex parameters are stored as paired real arrays. States come in
//! conjugate pairs implicitly, so outputs read `2·Re(C·h)`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CmmError, Result};
use crate::numeric::{causal_conv, matmul, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsmBackendChoice {
    DiagonalLti,
    SelectiveScan,
}

impl SsmBackendChoice {
    pub const ALL: [SsmBackendChoice; 2] = [SsmBackendChoice::DiagonalLti, SsmBackendChoice::SelectiveScan];

    pub fn as_str(&self) -> &'static str {
        match self {
            SsmBackendChoice::DiagonalLti => "diagonal_lti",
            SsmBackendChoice::SelectiveScan => "selective_scan",
        }
    }
}

impl fmt::Display for SsmBackendChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SsmBackendChoice {
    type Err = CmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal_lti" | "lti" | "s4d" => Ok(SsmBackendChoice::DiagonalLti),
            "selective_scan" | "selective" | "mamba" => Ok(SsmBackendChoice::SelectiveScan),
            other => Err(CmmError::param(format!("unknown SSM backend `{other}`"))),
        }
    }
}

/// Diagonal time-invariant SSM.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalSsmParams {
    /// Continuous eigenvalues `Λ`, shared by all channels. Real parts must be
    /// negative.
    pub lambda_re: Vec<f64>,
    pub lambda_im: Vec<f64>,
    /// Input map `B`, one complex entry per state.
    pub b_re: Vec<f64>,
    pub b_im: Vec<f64>,
    /// Output map `C`, `[channels, state]`.
    pub c_re: Matrix,
    pub c_im: Matrix,
    pub d_skip: Vec<f64>,
    /// Per-channel `ln Δ`.
    pub log_dt: Vec<f64>,
}

/// Zero-order-hold discretization, `[channels, state]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDiagonal {
    pub channels: usize,
    pub state_size: usize,
    pub abar: Vec<Complex64>,
    pub bbar: Vec<Complex64>,
}

impl DiagonalSsmParams {
    pub fn state_size(&self) -> usize {
        self.lambda_re.len()
    }

    pub fn channels(&self) -> usize {
        self.d_skip.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_size();
        let d = self.channels();
        if self.lambda_im.len() != n || self.b_re.len() != n || self.b_im.len() != n {
            return Err(CmmError::param("diagonal SSM: Λ and B must share the state size"));
        }
        if self.c_re.shape() != (d, n) || self.c_im.shape() != (d, n) {
            return Err(CmmError::shape("DiagonalSsmParams C", (d, n), self.c_re.shape()));
        }
        if self.log_dt.len() != d {
            return Err(CmmError::param("diagonal SSM: log_dt must have one entry per channel"));
        }
        if let Some(i) = self.lambda_re.iter().position(|&re| re.is_nan() || re >= 0.0) {
            if self.lambda_re[i] == 0.0 && self.lambda_im[i] == 0.0 {
                return Err(CmmError::Singularity { index: i });
            }
            return Err(CmmError::param(format!(
                "diagonal SSM: eigenvalue {i} has non-negative real part {}",
                self.lambda_re[i]
            )));
        }
        Ok(())
    }

    fn lambda(&self, n: usize) -> Complex64 {
        Complex64::new(self.lambda_re[n], self.lambda_im[n])
    }

    fn c(&self, d: usize, n: usize) -> Complex64 {
        Complex64::new(self.c_re.get(d, n), self.c_im.get(d, n))
    }
}

/// `Ā = exp(Δ·Λ)`, `B̄ = (Ā − 1)/Λ · B`, per channel and state.
pub fn discretize_zoh(params: &DiagonalSsmParams) -> Result<DiscreteDiagonal> {
    params.validate()?;
    let (d, n) = (params.channels(), params.state_size());
    let mut abar = Vec::with_capacity(d * n);
    let mut bbar = Vec::with_capacity(d * n);
    for ch in 0..d {
        let dt = params.log_dt[ch].exp();
        for s in 0..n {
            let lambda = params.lambda(s);
            let a = (lambda * dt).exp();
            let b = Complex64::new(params.b_re[s], params.b_im[s]);
            abar.push(a);
            bbar.push((a - 1.0) / lambda * b);
        }
    }
    Ok(DiscreteDiagonal {
        channels: d,
        state_size: n,
        abar,
        bbar,
    })
}

fn check_channels(x: &Matrix, channels: usize, op: &'static str) -> Result<()> {
    if x.cols() != channels {
        return Err(CmmError::shape(op, x.shape(), (x.rows(), channels)));
    }
    Ok(())
}

/// Runs the diagonal SSM as a recurrence from a zero state; `O(T·D·N)`.
pub fn ssm_scan_recurrent(x: &Matrix, params: &DiagonalSsmParams) -> Result<Matrix> {
    let disc = discretize_zoh(params)?;
    check_channels(x, disc.channels, "ssm_scan_recurrent")?;
    let (d, n) = (disc.channels, disc.state_size);
    let mut h = vec![Complex64::new(0.0, 0.0); d * n];
    let mut y = Matrix::zeros(x.rows(), d);
    for t in 0..x.rows() {
        let xt = x.row(t);
        let yt = y.row_mut(t);
        for ch in 0..d {
            let u = xt[ch];
            let mut acc = 0.0;
            for s in 0..n {
                let i = ch * n + s;
                h[i] = disc.abar[i] * h[i] + disc.bbar[i] * u;
                acc += (params.c(ch, s) * h[i]).re;
            }
            yt[ch] = 2.0 * acc + params.d_skip[ch] * u;
        }
    }
    Ok(y)
}

/// Materializes the convolution kernel `K[t] = 2·Re(C·Āᵗ·B̄)`, with the skip
/// term folded into `K[0]`.
pub fn ssm_kernel(params: &DiagonalSsmParams, len: usize) -> Result<Matrix> {
    if len == 0 {
        return Err(CmmError::param("kernel length must be at least 1"));
    }
    let disc = discretize_zoh(params)?;
    let (d, n) = (disc.channels, disc.state_size);
    let mut k = Matrix::zeros(len, d);
    for ch in 0..d {
        for s in 0..n {
            let i = ch * n + s;
            let cb = params.c(ch, s) * disc.bbar[i];
            let mut power = Complex64::new(1.0, 0.0);
            for t in 0..len {
                let v = k.get(t, ch) + 2.0 * (cb * power).re;
                k.set(t, ch, v);
                power *= disc.abar[i];
            }
        }
        let k0 = k.get(0, ch) + params.d_skip[ch];
        k.set(0, ch, k0);
    }
    Ok(k)
}

/// Runs the diagonal SSM as a causal convolution with its kernel.
pub fn ssm_convolve(x: &Matrix, params: &DiagonalSsmParams) -> Result<Matrix> {
    check_channels(x, params.channels(), "ssm_convolve")?;
    if x.rows() == 0 {
        return Ok(Matrix::zeros(0, params.channels()));
    }
    causal_conv(x, &ssm_kernel(params, x.rows())?)
}

/// Input-dependent SSM with a negative real diagonal state matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveScanParams {
    /// `A = −exp(a_log)`, `[channels, state]`.
    pub a_log: Matrix,
    /// Input → per-channel step size (pre-softplus), `[channels, channels]`.
    pub w_delta: Matrix,
    /// Input → `B_t`, `[channels, state]`.
    pub w_b: Matrix,
    /// Input → `C_t`, `[channels, state]`.
    pub w_c: Matrix,
    pub d_skip: Vec<f64>,
}

impl SelectiveScanParams {
    pub fn channels(&self) -> usize {
        self.d_skip.len()
    }

    pub fn state_size(&self) -> usize {
        self.a_log.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, n) = (self.channels(), self.state_size());
        for (name, m, want) in [
            ("a_log", &self.a_log, (d, n)),
            ("w_delta", &self.w_delta, (d, d)),
            ("w_b", &self.w_b, (d, n)),
            ("w_c", &self.w_c, (d, n)),
        ] {
            if m.shape() != want {
                return Err(CmmError::param(format!(
                    "selective scan: {name} has shape {:?}, expected {want:?}",
                    m.shape()
                )));
            }
        }
        Ok(())
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Sequential selective scan:
///
/// ```text
/// Δ_t = softplus(x_t·W_Δ)      B_t = x_t·W_B      C_t = x_t·W_C
/// h_t = exp(Δ_t ⊙ A) ⊙ h_{t−1} + (Δ_t ⊙ B_t)·x_t
/// y_t = C_t·h_t + D ⊙ x_t
/// ```
pub fn selective_scan(x: &Matrix, params: &SelectiveScanParams) -> Result<Matrix> {
    params.validate()?;
    let (d, n) = (params.channels(), params.state_size());
    check_channels(x, d, "selective_scan")?;
    let a: Vec<f64> = params.a_log.as_slice().iter().map(|v| -v.exp()).collect();
    let delta = matmul(x, &params.w_delta)?.map(softplus);
    let b = matmul(x, &params.w_b)?;
    let c = matmul(x, &params.w_c)?;

    let mut h = vec![0.0; d * n];
    let mut y = Matrix::zeros(x.rows(), d);
    for t in 0..x.rows() {
        let (xt, dt, bt, ct) = (x.row(t), delta.row(t), b.row(t), c.row(t));
        for ch in 0..d {
            let mut acc = 0.0;
            for s in 0..n {
                let i = ch * n + s;
                h[i] = (dt[ch] * a[i]).exp() * h[i] + dt[ch] * bt[s] * xt[ch];
                acc += ct[s] * h[i];
            }
            y.set(t, ch, acc + params.d_skip[ch] * xt[ch]);
        }
    }
    Ok(y)
}

/// Parameters of whichever backend a block was built with.
#[derive(Clone, Debug, PartialEq)]
pub enum SsmParams {
    DiagonalLti(DiagonalSsmParams),
    SelectiveScan(SelectiveScanParams),
}

impl SsmParams {
    pub fn backend(&self) -> SsmBackendChoice {
        match self {
            SsmParams::DiagonalLti(_) => SsmBackendChoice::DiagonalLti,
            SsmParams::SelectiveScan(_) => SsmBackendChoice::SelectiveScan,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            SsmParams::DiagonalLti(p) => p.channels(),
            SsmParams::SelectiveScan(p) => p.channels(),
        }
    }

    /// Recurrent evaluation for either backend.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            SsmParams::DiagonalLti(p) => ssm_scan_recurrent(x, p),
            SsmParams::SelectiveScan(p) => selective_scan(x, p),
        }
    }
}
