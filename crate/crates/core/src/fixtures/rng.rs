//! Counter-based generator for fixtures.
//!
//! Every draw is a pure function of `(seed, stream, counter)`, so any element
//! of any tensor can be regenerated independently and ports to other
//! languages only need the few constants below:
//!
//! ```text
//! mix64(z)   = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!              z ^= z >> 27; z *= 0x94D049BB133111EB; z ^ (z >> 31)
//! key        = mix64(seed + GAMMA·(stream + 1))          (wrapping u64)
//! bits       = mix64(key  + GAMMA·(counter + 1))
//! uniform    = ((bits >> 11) + 0.5) · 2⁻⁵³               ∈ (0, 1)
//! normal     = Acklam rational inverse normal CDF of `uniform`
//! GAMMA      = 0x9E3779B97F4A7C15
//! ```
//!
//! The logarithm inside the inverse CDF comes from `libm`, which gives the
//! same bits on every platform.

pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

// Coefficients are kept digit for digit as published.

#[allow(clippy::excessive_precision)]
const ACKLAM_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
#[allow(clippy::excessive_precision)]
const ACKLAM_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
#[allow(clippy::excessive_precision)]
const ACKLAM_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
#[allow(clippy::excessive_precision)]
const ACKLAM_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const ACKLAM_P_LOW: f64 = 0.02425;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One independent stream of draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            key: mix64(seed.wrapping_add(GAMMA.wrapping_mul(stream.wrapping_add(1)))),
        }
    }

    #[inline]
    pub fn bits(&self, counter: u64) -> u64 {
        mix64(self.key.wrapping_add(GAMMA.wrapping_mul(counter.wrapping_add(1))))
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&self, counter: u64) -> f64 {
        ((self.bits(counter) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform_in(&self, counter: u64, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform(counter)
    }

    #[inline]
    pub fn normal(&self, counter: u64) -> f64 {
        inverse_normal_cdf(self.uniform(counter))
    }
}

/// Acklam's rational approximation of the standard normal quantile
/// (relative error below 1.2e-9). `p` must lie in (0, 1).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    let (a, b, c, d) = (ACKLAM_A, ACKLAM_B, ACKLAM_C, ACKLAM_D);
    if p < ACKLAM_P_LOW {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    } else if p <= 1.0 - ACKLAM_P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    } else {
        let q = libm::sqrt(-2.0 * libm::log(1.0 - p));
        -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    }
}
