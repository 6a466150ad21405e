//! Plain loops over row-major slices. Summation order is fixed so results are
//! deterministic; none of these reassociate floating-point sums.

const TILE_ROWS: usize = 4;
const TILE_COLS: usize = 8;

/// `out[m×n] += a[m×k] · b[k×n]`
///
/// Register-tiled; every output element accumulates its `k` products in
/// ascending order onto its initial value.
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    let full_cols = n - n % TILE_COLS;
    let mut i = 0;
    while i + TILE_ROWS <= m {
        let mut j = 0;
        while j < full_cols {
            let mut acc = [[0.0f64; TILE_COLS]; TILE_ROWS];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&out[(i + r) * n + j..(i + r) * n + j + TILE_COLS]);
            }
            for p in 0..k {
                let bt: &[f64; TILE_COLS] = b[p * n + j..p * n + j + TILE_COLS].try_into().unwrap();
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for c in 0..TILE_COLS {
                        row[c] += av * bt[c];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                out[(i + r) * n + j..(i + r) * n + j + TILE_COLS].copy_from_slice(row);
            }
            j += TILE_COLS;
        }
        if full_cols < n {
            for r in i..i + TILE_ROWS {
                row_times_matrix(&a[r * k..(r + 1) * k], b, &mut out[r * n..(r + 1) * n], n, full_cols);
            }
        }
        i += TILE_ROWS;
    }
    for r in i..m {
        row_times_matrix(&a[r * k..(r + 1) * k], b, &mut out[r * n..(r + 1) * n], n, 0);
    }
}

/// `out[from..] += a_row · b[:, from..]`, ascending over the shared axis.
fn row_times_matrix(a_row: &[f64], b: &[f64], out_row: &mut [f64], n: usize, from: usize) {
    for (p, &av) in a_row.iter().enumerate() {
        let b_row = &b[p * n + from..(p + 1) * n];
        for (o, &bv) in out_row[from..].iter_mut().zip(b_row) {
            *o += av * bv;
        }
    }
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    if m == 1 {
        for j in 0..n {
            out[j] += dot(a, &b[j * k..(j + 1) * k]);
        }
        return;
    }
    let bt = transpose(&b[..n * k], n, k);
    matmul_acc(a, &bt, out, m, k, n);
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let at = transpose(&a[..m * k], m, k);
    matmul_acc(&at, b, out, k, m, n);
}

/// Dot product with four interleaved partial sums, combined in a fixed order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha · x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Max-subtracted log-sum-exp of `row / temperature`.
pub fn log_sum_exp(row: &[f64], temperature: f64) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
    let sum: f64 = row.iter().map(|&v| (v / temperature - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax_row(row: &[f64], temperature: f64, out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v / temperature - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn log_softmax_row(row: &[f64], temperature: f64, out: &mut [f64]) {
    let lse = log_sum_exp(row, temperature);
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v / temperature - lse;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalizes `x` into `out`, returning the reciprocal standard deviation.
pub fn layer_norm_row(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
    }
    rstd
}
