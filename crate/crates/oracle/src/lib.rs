//! Naive reference implementations for the test suites.
//!
//! Everything here works on `Vec<Vec<f64>>` with explicit loops and its own
//! complex arithmetic, and shares no code path with `cmm-core` beyond reading
//! the weight structs. Slow on purpose.

// Complex helpers are plain methods, not operator impls, on purpose.
#![allow(clippy::should_implement_trait)]

use cmm_core::{
    BaselineWeights, CmmConfig, CmmWeights, DiagonalSsmParams, FeedForward, LayerNormParams,
    Matrix, SelectiveScanParams, SsmParams,
};

pub type Rows = Vec<Vec<f64>>;

pub const LN_EPS: f64 = 1e-5;

pub fn rows(m: &Matrix) -> Rows {
    (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect())
        .collect()
}

pub fn matrix(r: &Rows) -> Matrix {
    let cols = r.first().map_or(0, |x| x.len());
    Matrix::new(r.len(), cols, r.iter().flatten().copied().collect()).unwrap()
}

pub fn max_abs(a: &Rows, b: &Rows) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    let mut m: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.len(), y.len(), "column count");
        for (p, q) in x.iter().zip(y) {
            m = m.max((p - q).abs());
        }
    }
    m
}

/// Triple loop, i-j-k order.
pub fn matmul(a: &Rows, b: &Rows) -> Rows {
    let n = a.len();
    let inner = b.len();
    let m = b.first().map_or(0, |r| r.len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        assert_eq!(a[i].len(), inner);
        for j in 0..m {
            let mut s = 0.0;
            for k in 0..inner {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Rows) -> Rows {
    let m = a.first().map_or(0, |r| r.len());
    (0..m).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Rows, b: &Rows) -> Rows {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Softmax with the normalizer accumulated in double-double arithmetic.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &v in row {
        if v > max {
            max = v;
        }
    }
    let e: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let (mut hi, mut lo) = (0.0, 0.0);
    for &v in &e {
        let (s, err) = two_sum(hi, v);
        hi = s;
        lo += err;
    }
    let total = hi + lo;
    e.iter().map(|&v| v / total).collect()
}

/// Two-pass mean/variance layer norm.
pub fn layer_norm(x: &Rows, gamma: &[f64], beta: &[f64], eps: f64) -> Rows {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mut mean = 0.0;
            for &v in r {
                mean += v;
            }
            mean /= n;
            let mut var = 0.0;
            for &v in r {
                var += (v - mean) * (v - mean);
            }
            var /= n;
            (0..r.len())
                .map(|j| (r[j] - mean) / (var + eps).sqrt() * gamma[j] + beta[j])
                .collect()
        })
        .collect()
}

/// erf from its Maclaurin series for |x| ≤ 3 and the erfc continued
/// fraction beyond, where the series cancels badly.
pub fn erf_series(x: f64) -> f64 {
    if x.abs() > 3.0 {
        return x.signum() * (1.0 - erfc_continued_fraction(x.abs()));
    }

    let mut term = x;
    let mut sum = x;
    let x2 = x * x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= -x2 / n;
        let add = term / (2.0 * n + 1.0);
        sum += add;
        if add.abs() < 1e-18 * sum.abs().max(1e-300) || n > 200.0 {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

/// `erfc(x) = e^{−x²}/√π · 1/(x + ½/(x + 1/(x + 3⁄2/(x + …))))`, evaluated
/// bottom-up.
fn erfc_continued_fraction(x: f64) -> f64 {
    let mut tail = x;
    for n in (1..=200).rev() {
        tail = x + (n as f64 / 2.0) / tail;
    }
    (-x * x).exp() / std::f64::consts::PI.sqrt() / tail
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf_series(x / std::f64::consts::SQRT_2))
}

/// Full sort by (value desc, index asc), first `k`, returned ascending.
pub fn top_k(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut out = idx[..k].to_vec();
    out.sort();
    out
}

/// Double loop causal convolution per channel.
pub fn causal_conv(signal: &Rows, kernel: &Rows) -> Rows {
    let t_len = signal.len();
    let c = signal.first().map_or(0, |r| r.len());
    let mut out = vec![vec![0.0; c]; t_len];
    for ch in 0..c {
        for t in 0..t_len {
            let mut s = 0.0;
            for tau in 0..=t {
                s += kernel[tau][ch] * signal[t - tau][ch];
            }
            out[t][ch] = s;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cx {
    pub re: f64,
    pub im: f64,
}

impl Cx {
    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }
    pub fn mul(self, o: Cx) -> Cx {
        Cx::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
    pub fn add(self, o: Cx) -> Cx {
        Cx::new(self.re + o.re, self.im + o.im)
    }
    pub fn scale(self, s: f64) -> Cx {
        Cx::new(self.re * s, self.im * s)
    }
    pub fn div(self, o: Cx) -> Cx {
        let d = o.re * o.re + o.im * o.im;
        Cx::new((self.re * o.re + self.im * o.im) / d, (self.im * o.re - self.re * o.im) / d)
    }
    pub fn exp(self) -> Cx {
        let m = self.re.exp();
        Cx::new(m * self.im.cos(), m * self.im.sin())
    }
    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// `(Ā, B̄)` for channel `ch`, state `n`.
pub fn zoh(p: &DiagonalSsmParams, ch: usize, n: usize) -> (Cx, Cx) {
    let lambda = Cx::new(p.lambda_re[n], p.lambda_im[n]);
    let dt = p.log_dt[ch].exp();
    let abar = lambda.scale(dt).exp();
    let b = Cx::new(p.b_re[n], p.b_im[n]);
    let bbar = abar.add(Cx::new(-1.0, 0.0)).div(lambda).mul(b);
    (abar, bbar)
}

/// Step-by-step diagonal SSM.
pub fn diagonal_ssm(x: &Rows, p: &DiagonalSsmParams) -> Rows {
    let d = p.d_skip.len();
    let n = p.lambda_re.len();
    let mut y = vec![vec![0.0; d]; x.len()];
    for ch in 0..d {
        let disc: Vec<(Cx, Cx)> = (0..n).map(|s| zoh(p, ch, s)).collect();
        let mut h = vec![Cx::new(0.0, 0.0); n];
        for t in 0..x.len() {
            let mut out = 0.0;
            for s in 0..n {
                h[s] = disc[s].0.mul(h[s]).add(disc[s].1.scale(x[t][ch]));
                let c = Cx::new(p.c_re.get(ch, s), p.c_im.get(ch, s));
                out += 2.0 * c.mul(h[s]).re;
            }
            y[t][ch] = out + p.d_skip[ch] * x[t][ch];
        }
    }
    y
}

fn softplus(v: f64) -> f64 {
    if v > 20.0 {
        v
    } else {
        (1.0 + v.exp()).ln()
    }
}

/// Step-by-step selective scan.
pub fn selective_scan(x: &Rows, p: &SelectiveScanParams) -> Rows {
    let d = p.d_skip.len();
    let n = p.a_log.cols();
    let w_delta = rows(&p.w_delta);
    let w_b = rows(&p.w_b);
    let w_c = rows(&p.w_c);
    let mut h = vec![vec![0.0; n]; d];
    let mut y = vec![vec![0.0; d]; x.len()];
    for t in 0..x.len() {
        let xt = &x[t];
        let delta: Vec<f64> = (0..d)
            .map(|j| softplus((0..d).map(|i| xt[i] * w_delta[i][j]).sum()))
            .collect();
        let b: Vec<f64> = (0..n).map(|s| (0..d).map(|i| xt[i] * w_b[i][s]).sum()).collect();
        let c: Vec<f64> = (0..n).map(|s| (0..d).map(|i| xt[i] * w_c[i][s]).sum()).collect();
        for ch in 0..d {
            let mut out = 0.0;
            for s in 0..n {
                let a = -p.a_log.get(ch, s).exp();
                h[ch][s] = (delta[ch] * a).exp() * h[ch][s] + delta[ch] * b[s] * xt[ch];
                out += c[s] * h[ch][s];
            }
            y[t][ch] = out + p.d_skip[ch] * xt[ch];
        }
    }
    y
}

pub fn ssm(x: &Rows, p: &SsmParams) -> Rows {
    match p {
        SsmParams::DiagonalLti(d) => diagonal_ssm(x, d),
        SsmParams::SelectiveScan(s) => selective_scan(x, s),
    }
}

/// Per-head softmaxed scores, `[head][token][grid]`.
pub fn correlation_scores(xt_proj: &Rows, xv_proj: &Rows, heads: usize) -> Vec<Rows> {
    let width = xt_proj[0].len();
    let dh = width / heads;
    (0..heads)
        .map(|h| {
            xt_proj
                .iter()
                .map(|q| {
                    let logits: Vec<f64> = xv_proj
                        .iter()
                        .map(|k| {
                            let mut s = 0.0;
                            for c in h * dh..(h + 1) * dh {
                                s += q[c] * k[c];
                            }
                            s / (dh as f64).sqrt()
                        })
                        .collect();
                    softmax(&logits)
                })
                .collect()
        })
        .collect()
}

/// Mask to the top-k entries of a row and rescale them to sum to one.
pub fn mask_and_normalize(row: &[f64], k: usize) -> Vec<f64> {
    let keep = top_k(row, k);
    let total: f64 = keep.iter().map(|&i| row[i]).sum();
    (0..row.len())
        .map(|i| if keep.contains(&i) { row[i] / total } else { 0.0 })
        .collect()
}

/// Head-averaged weighted sum of grid rows.
pub fn context(renorm: &[Rows], xv_proj: &Rows) -> Rows {
    let heads = renorm.len();
    let tokens = renorm[0].len();
    let grids = xv_proj.len();
    let width = xv_proj[0].len();
    let mut c = vec![vec![0.0; width]; tokens];
    for t in 0..tokens {
        for g in 0..grids {
            let mut w = 0.0;
            for head in renorm {
                w += head[t][g];
            }
            w /= heads as f64;
            for j in 0..width {
                c[t][j] += w * xv_proj[g][j];
            }
        }
    }
    c
}

/// `x ⊙ (1 + α·γ) + α·β` with `[γ | β] = c · W`.
pub fn film(x: &Rows, c: &Rows, w: &Matrix, alpha: f64) -> Rows {
    let gb = matmul(c, &rows(w));
    let d = x[0].len();
    x.iter()
        .zip(&gb)
        .map(|(xr, g)| (0..d).map(|j| xr[j] * (1.0 + alpha * g[j]) + alpha * g[d + j]).collect())
        .collect()
}

pub fn ffn(u: &Rows, f: &FeedForward) -> Rows {
    let h: Rows = matmul(u, &rows(&f.w1))
        .into_iter()
        .map(|r| r.iter().zip(&f.b1).map(|(v, b)| gelu(v + b)).collect())
        .collect();
    matmul(&h, &rows(&f.w2))
        .into_iter()
        .map(|r| r.iter().zip(&f.b2).map(|(v, b)| v + b).collect())
        .collect()
}

fn ln(x: &Rows, p: &LayerNormParams) -> Rows {
    layer_norm(x, &p.gamma, &p.beta, LN_EPS)
}

/// Output of the monolithic CMM oracle.
pub struct CmmOracle {
    pub scores: Vec<Rows>,
    pub renormalized: Vec<Rows>,
    pub context: Rows,
    pub x_film: Rows,
    pub sequence: Rows,
    pub pooled: Vec<f64>,
}

/// Whole CMM block as one straight-line function.
pub fn cmm(xt: &Rows, xv: &Rows, w: &CmmWeights, cfg: &CmmConfig) -> CmmOracle {
    let xt_proj = matmul(xt, &rows(&w.correlation.w_text));
    let xv_proj = matmul(xv, &rows(&w.correlation.w_vision));
    let scores = correlation_scores(&xt_proj, &xv_proj, cfg.heads);
    let renormalized: Vec<Rows> = scores
        .iter()
        .map(|head| head.iter().map(|r| mask_and_normalize(r, cfg.top_k)).collect())
        .collect();
    let c = context(&renormalized, &xv_proj);
    let normed = layer_norm(xt, &w.film.ln_gamma, &w.film.ln_beta, LN_EPS);
    let x_film = film(&normed, &c, &w.film.w_in, w.film.alpha);
    let y = ssm(&x_film, &w.ssm);
    let y_film = film(&y, &c, &w.film.w_out, w.film.alpha);
    let u = add(xt, &y_film);
    let sequence = ln(&add(&u, &ffn(&u, &w.ffn)), &w.out_ln);
    let pooled = mean_rows(&sequence);
    CmmOracle {
        scores,
        renormalized,
        context: c,
        x_film,
        sequence,
        pooled,
    }
}

pub fn mean_rows(x: &Rows) -> Vec<f64> {
    let d = x[0].len();
    (0..d)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / x.len() as f64)
        .collect()
}

/// Multi-head attention with full score matrices.
pub fn attention(
    queries: &Rows,
    keys_values: &Rows,
    wq: &Matrix,
    wk: &Matrix,
    wv: &Matrix,
    wo: &Matrix,
    heads: usize,
) -> Rows {
    let q = matmul(queries, &rows(wq));
    let k = matmul(keys_values, &rows(wk));
    let v = matmul(keys_values, &rows(wv));
    let width = q[0].len();
    let dh = width / heads;
    let mut merged = vec![vec![0.0; width]; q.len()];
    for h in 0..heads {
        for i in 0..q.len() {
            let logits: Vec<f64> = (0..k.len())
                .map(|j| {
                    let mut s = 0.0;
                    for c in h * dh..(h + 1) * dh {
                        s += q[i][c] * k[j][c];
                    }
                    s / (dh as f64).sqrt()
                })
                .collect();
            let p = softmax(&logits);
            for c in h * dh..(h + 1) * dh {
                let mut s = 0.0;
                for j in 0..k.len() {
                    s += p[j] * v[j][c];
                }
                merged[i][c] = s;
            }
        }
    }
    matmul(&merged, &rows(wo))
}

/// Prepend baseline: attention, FFN and LN run over the whole joint
/// sequence, then the token rows are sliced off.
pub fn prepend(xt: &Rows, xv: &Rows, w: &BaselineWeights) -> (Rows, Vec<f64>) {
    let prefix = if xv.is_empty() { vec![] } else { ffn(xv, &w.projector) };
    let g = prefix.len();
    let mut joint = prefix;
    joint.extend(xt.iter().cloned());
    let a = &w.attention;
    let att = attention(&joint, &joint, &a.wq, &a.wk, &a.wv, &a.wo, a.heads);
    let u = add(&joint, &att);
    let out = ln(&add(&u, &ffn(&u, &w.ffn)), &w.out_ln);
    let seq: Rows = out[g..].to_vec();
    let pooled = mean_rows(&seq);
    (seq, pooled)
}

pub fn cross_attention(xt: &Rows, xv: &Rows, w: &BaselineWeights) -> (Rows, Vec<f64>) {
    let grids = ffn(xv, &w.projector);
    let a = &w.attention;
    let att = attention(xt, &grids, &a.wq, &a.wk, &a.wv, &a.wo, a.heads);
    let u = add(xt, &att);
    let seq = ln(&add(&u, &ffn(&u, &w.ffn)), &w.out_ln);
    let pooled = mean_rows(&seq);
    (seq, pooled)
}

/// Least squares line through `(x, y)` from the 2×2 normal equations.
/// Returns `(slope, intercept, r_squared)`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sx += a;
        sy += b;
        sxx += a * a;
        sxy += a * b;
    }
    let det = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let mean = sy / n;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let fit = intercept + slope * a;
        ss_res += (b - fit) * (b - fit);
        ss_tot += (b - mean) * (b - mean);
    }
    (slope, intercept, 1.0 - ss_res / ss_tot)
}
