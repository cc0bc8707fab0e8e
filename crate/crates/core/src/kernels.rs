//! Numeric kernels on row-major slices, plus their analytic FLOP counts.
//!
//! These are the forward and backward bodies behind the [`crate::Graph`]
//! operations. They allocate their outputs and never touch the ledger; the
//! graph does the accounting.

use alloc::vec;
use alloc::vec::Vec;

use crate::Real;

pub const RMS_EPS: f64 = 1e-5;

/// Analytic FLOP counts. One multiply-add is 2 FLOPs; normalisations and
/// softmax are counted per elementwise operation.
pub mod flops {
    pub fn matmul(m: usize, k: usize, n: usize) -> u64 {
        2 * (m * k * n) as u64
    }

    pub fn elementwise(n: usize) -> u64 {
        n as u64
    }

    /// Square, accumulate, normalise, scale by weight.
    pub fn rms_norm(rows: usize, d: usize) -> u64 {
        4 * (rows * d) as u64
    }

    /// Max-subtract, exp, accumulate, divide.
    pub fn softmax(rows: usize, n: usize) -> u64 {
        4 * (rows * n) as u64
    }

    /// Sigmoid (3), multiply by gate, multiply by up.
    pub fn swiglu(n: usize) -> u64 {
        5 * n as u64
    }

    /// Four multiplies and two adds per rotated pair.
    pub fn rope(n: usize) -> u64 {
        3 * n as u64
    }

    /// Number of (query, key) pairs attended to.
    pub fn attention_pairs(t: usize, causal: bool) -> u64 {
        let t = t as u64;
        if causal {
            t * (t + 1) / 2
        } else {
            t * t
        }
    }

    /// Scores (2·dh), scale (1), softmax (4) and weighted sum (2·dh) per
    /// pair and head.
    pub fn attention(t: usize, d: usize, n_heads: usize, causal: bool) -> u64 {
        let dh = (d / n_heads) as u64;
        n_heads as u64 * attention_pairs(t, causal) * (4 * dh + 5)
    }

    pub fn masked_mse(valid_rows: usize, d: usize) -> u64 {
        3 * (valid_rows * d) as u64
    }

    pub fn masked_cross_entropy(valid_rows: usize, vocab: usize) -> u64 {
        4 * (valid_rows * vocab) as u64
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = alpha.mul_acc(*xi, *yi);
    }
}

const TILE_ROWS: usize = 4;

/// Accumulates a `TILE_ROWS × C` block of `C` starting at column `j`.
#[inline(always)]
fn tile<T: Real, const C: usize>(a: &[T], b: &[T], c: &mut [T], i: usize, j: usize, k: usize, n: usize) {
    let mut acc = [[T::zero(); C]; TILE_ROWS];
    for p in 0..k {
        let brow: &[T; C] = b[p * n + j..p * n + j + C].try_into().unwrap();
        for (r, accr) in acc.iter_mut().enumerate() {
            let av = a[(i + r) * k + p];
            for (cc, bv) in accr.iter_mut().zip(brow) {
                *cc = av.mul_acc(*bv, *cc);
            }
        }
    }
    for (r, accr) in acc.iter().enumerate() {
        c[(i + r) * n + j..(i + r) * n + j + C].copy_from_slice(accr);
    }
}

/// `C[m,n] = A[m,k] · B[k,n]`
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    let mut i = 0;
    while i + TILE_ROWS <= m {
        let mut j = 0;
        while j + 64 <= n {
            tile::<T, 64>(a, b, &mut c, i, j, k, n);
            j += 64;
        }
        while j + 16 <= n {
            tile::<T, 16>(a, b, &mut c, i, j, k, n);
            j += 16;
        }
        if j < n {
            for r in i..i + TILE_ROWS {
                row_times_matrix(&a[r * k..(r + 1) * k], b, n, j, &mut c[r * n..(r + 1) * n]);
            }
        }
        i += TILE_ROWS;
    }
    for r in i..m {
        row_times_matrix(&a[r * k..(r + 1) * k], b, n, 0, &mut c[r * n..(r + 1) * n]);
    }
    c
}

/// `crow[from..] = arow · B[:, from..]`
fn row_times_matrix<T: Real>(arow: &[T], b: &[T], n: usize, from: usize, crow: &mut [T]) {
    for (p, av) in arow.iter().enumerate() {
        axpy(&mut crow[from..], *av, &b[p * n + from..(p + 1) * n]);
    }
}

fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

/// `C[m,n] = A[m,k] · B[n,k]ᵀ`
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    matmul(a, &transpose(b, n, k), m, k, n)
}

/// `C[k,n] = A[m,k]ᵀ · B[m,n]`
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    matmul(&transpose(a, m, k), b, k, m, n)
}

/// Returns the normalised output and the per-row inverse RMS.
pub fn rms_norm<T: Real>(x: &[T], w: &[T], rows: usize, d: usize) -> (Vec<T>, Vec<T>) {
    let eps = T::lit(RMS_EPS);
    let dn = T::lit(d as f64);
    let mut y = vec![T::zero(); rows * d];
    let mut inv = vec![T::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let ms = dot(xr, xr) / dn;
        let ir = T::one() / (ms + eps).sqrt();
        inv[r] = ir;
        for ((yo, xi), wi) in y[r * d..(r + 1) * d].iter_mut().zip(xr).zip(w) {
            *yo = *xi * ir * *wi;
        }
    }
    (y, inv)
}

/// Gradients of [`rms_norm`] with respect to `x` and `w`.
pub fn rms_norm_backward<T: Real>(
    x: &[T],
    w: &[T],
    inv: &[T],
    dy: &[T],
    rows: usize,
    d: usize,
) -> (Vec<T>, Vec<T>) {
    let dn = T::lit(d as f64);
    let mut dx = vec![T::zero(); rows * d];
    let mut dw = vec![T::zero(); d];
    for r in 0..rows {
        let ir = inv[r];
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut proj = T::zero();
        for c in 0..d {
            let xhat = xr[c] * ir;
            let dxhat = dyr[c] * w[c];
            dw[c] = dw[c] + dyr[c] * xhat;
            proj = proj + dxhat * xhat;
        }
        proj = proj / dn;
        for c in 0..d {
            let xhat = xr[c] * ir;
            dx[r * d + c] = ir * (dyr[c] * w[c] - xhat * proj);
        }
    }
    (dx, dw)
}

pub fn softmax_rows<T: Real>(x: &[T], rows: usize, n: usize) -> Vec<T> {
    let mut y = vec![T::zero(); rows * n];
    for r in 0..rows {
        softmax_into(&x[r * n..(r + 1) * n], &mut y[r * n..(r + 1) * n]);
    }
    y
}

fn softmax_into<T: Real>(x: &[T], y: &mut [T]) {
    let max = x.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
    let mut sum = T::zero();
    for (yo, xi) in y.iter_mut().zip(x) {
        *yo = (*xi - max).kernel_exp();
        sum = sum + *yo;
    }
    for yo in y.iter_mut() {
        *yo = *yo / sum;
    }
}

pub fn softmax_rows_backward<T: Real>(y: &[T], dy: &[T], rows: usize, n: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * n];
    for r in 0..rows {
        let yr = &y[r * n..(r + 1) * n];
        let dyr = &dy[r * n..(r + 1) * n];
        let s = dot(yr, dyr);
        for c in 0..n {
            dx[r * n + c] = yr[c] * (dyr[c] - s);
        }
    }
    dx
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).kernel_exp())
}

/// `silu(gate) * up`
pub fn swiglu<T: Real>(gate: &[T], up: &[T]) -> Vec<T> {
    gate.iter().zip(up).map(|(g, u)| *g * sigmoid(*g) * *u).collect()
}

pub fn swiglu_backward<T: Real>(gate: &[T], up: &[T], dy: &[T]) -> (Vec<T>, Vec<T>) {
    let mut dg = vec![T::zero(); gate.len()];
    let mut du = vec![T::zero(); gate.len()];
    for i in 0..gate.len() {
        let g = gate[i];
        let s = sigmoid(g);
        let silu = g * s;
        du[i] = dy[i] * silu;
        dg[i] = dy[i] * up[i] * s * (T::one() + g * (T::one() - s));
    }
    (dg, du)
}

/// Rotary position embedding over `t` rows of width `d` split into
/// `n_heads` heads. Adjacent pairs `(2c, 2c+1)` of every head are rotated by
/// `(offset + row) · base^(-2c/dh)`; `inverse` rotates the other way, which
/// is also the backward pass.
pub fn rope<T: Real>(
    x: &[T],
    t: usize,
    d: usize,
    n_heads: usize,
    base: f64,
    offset: usize,
    inverse: bool,
) -> Vec<T> {
    let dh = d / n_heads;
    let half = dh / 2;
    let freqs: Vec<f64> = (0..half).map(|c| libm_pow(base, -2.0 * c as f64 / dh as f64)).collect();
    let mut y = vec![T::zero(); t * d];
    for r in 0..t {
        let pos = (offset + r) as f64;
        for c in 0..half {
            let ang = pos * freqs[c];
            let (s, co) = (T::lit(num_traits::Float::sin(ang)), T::lit(num_traits::Float::cos(ang)));
            let s = if inverse { -s } else { s };
            for h in 0..n_heads {
                let i0 = r * d + h * dh + 2 * c;
                let (a, b) = (x[i0], x[i0 + 1]);
                y[i0] = a * co - b * s;
                y[i0 + 1] = a * s + b * co;
            }
        }
    }
    y
}

fn libm_pow(a: f64, b: f64) -> f64 {
    num_traits::Float::powf(a, b)
}

/// Multi-head scaled dot-product attention over `t` rows of width `d`.
/// Returns the output and the attention probabilities laid out
/// `[head, query, key]`.
pub fn attention<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    t: usize,
    d: usize,
    n_heads: usize,
    causal: bool,
) -> (Vec<T>, Vec<T>) {
    let dh = d / n_heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut out = vec![T::zero(); t * d];
    let mut probs = vec![T::zero(); n_heads * t * t];
    for h in 0..n_heads {
        let off = h * dh;
        for i in 0..t {
            let jmax = if causal { i + 1 } else { t };
            let qi = &q[i * d + off..i * d + off + dh];
            let prow = &mut probs[(h * t + i) * t..(h * t + i) * t + jmax];
            for (j, p) in prow.iter_mut().enumerate() {
                *p = dot(qi, &k[j * d + off..j * d + off + dh]) * scale;
            }
            let scores: Vec<T> = prow.to_vec();
            softmax_into(&scores, prow);
            let orow = &mut out[i * d + off..i * d + off + dh];
            for (j, p) in prow.iter().enumerate() {
                axpy(orow, *p, &v[j * d + off..j * d + off + dh]);
            }
        }
    }
    (out, probs)
}

/// Gradients of [`attention`] with respect to `q`, `k` and `v`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    t: usize,
    d: usize,
    n_heads: usize,
    causal: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = d / n_heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut dq = vec![T::zero(); t * d];
    let mut dk = vec![T::zero(); t * d];
    let mut dv = vec![T::zero(); t * d];
    let mut dp = vec![T::zero(); t];
    for h in 0..n_heads {
        let off = h * dh;
        for i in 0..t {
            let jmax = if causal { i + 1 } else { t };
            let doi = &dout[i * d + off..i * d + off + dh];
            let prow = &probs[(h * t + i) * t..(h * t + i) * t + jmax];
            for j in 0..jmax {
                dp[j] = dot(doi, &v[j * d + off..j * d + off + dh]);
                axpy(&mut dv[j * d + off..j * d + off + dh], prow[j], doi);
            }
            let s = dot(prow, &dp[..jmax]);
            let qi = &q[i * d + off..i * d + off + dh];
            for j in 0..jmax {
                let ds = prow[j] * (dp[j] - s) * scale;
                axpy(&mut dq[i * d + off..i * d + off + dh], ds, &k[j * d + off..j * d + off + dh]);
                axpy(&mut dk[j * d + off..j * d + off + dh], ds, qi);
            }
        }
    }
    (dq, dk, dv)
}

/// `log Σ exp(x)` computed stably.
pub fn log_sum_exp<T: Real>(x: &[T]) -> T {
    let max = x.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
    let s: T = x.iter().map(|v| (*v - max).kernel_exp()).sum();
    max + s.ln()
}

/// Log-probabilities of `targets[r]` under row `r` of `logits[rows, vocab]`.
pub fn token_log_probs<T: Real>(logits: &[T], vocab: usize, rows: &[(usize, u32)]) -> Vec<T> {
    rows.iter()
        .map(|&(r, tok)| {
            let row = &logits[r * vocab..(r + 1) * vocab];
            row[tok as usize] - log_sum_exp(row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_kernel_exp_tracks_library_exp() {
        let mut worst = 0.0f64;
        for i in -20000..=20000 {
            let x = i as f32 * 0.0043;
            let got = x.kernel_exp() as f64;
            let want = (x as f64).exp();
            worst = worst.max((got - want).abs() / want);
        }
        assert!(worst < 1e-6, "{worst}");
        assert_eq!((-1000.0f32).kernel_exp() < 1e-37, true);
    }

    #[test]
    fn matmul_ones_and_flop_convention() {
        let a = vec![1.0f32; 6];
        let b = vec![1.0f32; 6];
        assert_eq!(matmul(&a, &b, 2, 3, 2), vec![3.0; 4]);
        assert_eq!(flops::matmul(2, 3, 2), 24);
    }

    #[test]
    fn transposed_variants_agree_with_plain() {
        let a: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect(); // 3x4
        let b: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect(); // 4x5
        let c = matmul(&a, &b, 3, 4, 5);
        let mut bt = vec![0.0; 20];
        for p in 0..4 {
            for j in 0..5 {
                bt[j * 4 + p] = b[p * 5 + j];
            }
        }
        let c2 = matmul_nt(&a, &bt, 3, 4, 5);
        assert!(max_abs(&c, &c2) < 1e-12);
        let mut at = vec![0.0; 12];
        for i in 0..3 {
            for p in 0..4 {
                at[p * 3 + i] = a[i * 4 + p];
            }
        }
        let c3 = matmul_tn(&at, &b, 4, 3, 5);
        assert!(max_abs(&c, &c3) < 1e-12);
    }

    #[test]
    fn rope_inverse_round_trips() {
        let x: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).cos()).collect();
        let y = rope(&x, 3, 16, 2, 10000.0, 5, false);
        let z = rope(&y, 3, 16, 2, 10000.0, 5, true);
        assert!(max_abs(&x, &z) < 1e-12);
    }

    #[test]
    fn causal_attention_first_row_copies_first_value() {
        let q = vec![0.3f64, -0.1, 0.2, 0.9, 1.0, 0.5, -0.4, 0.1];
        let k = q.clone();
        let v: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let (out, probs) = attention(&q, &k, &v, 2, 4, 1, true);
        assert_eq!(&out[..4], &v[..4]);
        assert_eq!(probs[1], 0.0);
        assert!((probs[2] + probs[3] - 1.0).abs() < 1e-12);
    }

    fn max_abs(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}
