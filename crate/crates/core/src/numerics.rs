//! Dense linear algebra, addressable random streams and the finite-difference
//! gradient oracle shared by the rest of the crate.
//!
//! Everything is `f64` and row-major. Models in this crate are small, so the
//! kernels here are plain loops.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Flat vector of `f64`.
pub type Vector = Vec<f64>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("matrix dims must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        ensure_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.rows];
        gemv_acc(&mut out, &self.data, self.cols, x);
        Ok(out)
    }
}

/// `out[r] += Σ_c m[r, c] · x[c]` for a row-major `m` with `cols` columns.
#[inline]
pub fn gemv_acc(out: &mut [f64], m: &[f64], cols: usize, x: &[f64]) {
    debug_assert_eq!(m.len(), out.len() * cols);
    debug_assert_eq!(x.len(), cols);
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out[c] += Σ_r m[r, c] · y[r]`, i.e. the transposed product.
#[inline]
pub fn gemv_t_acc(out: &mut [f64], m: &[f64], cols: usize, y: &[f64]) {
    debug_assert_eq!(m.len(), y.len() * cols);
    for (&yr, row) in y.iter().zip(m.chunks_exact(cols)) {
        if yr != 0.0 {
            axpy(out, yr, row);
        }
    }
}

/// Rank-one update `m += y xᵀ`.
#[inline]
pub fn outer_acc(m: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (&yr, row) in y.iter().zip(m.chunks_exact_mut(cols)) {
        if yr != 0.0 {
            axpy(row, yr, x);
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a · x`
#[inline]
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn ensure_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Euclidean norm. Errors on NaN/Inf entries.
pub fn l2_norm(v: &[f64]) -> Result<f64> {
    ensure_finite(v)?;
    Ok(v.iter().map(|x| x * x).sum::<f64>().sqrt())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vector {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vector = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// `log Σ exp(x_i)`; returns `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// A seeded, addressable random stream.
///
/// Each `(seed, stream_id)` pair selects an independent ChaCha8 keystream, so
/// every (run, epoch, batch, purpose) tuple can own its draws without any
/// shared mutable state.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Stream addressed by a tuple of integer coordinates.
    pub fn keyed(seed: u64, key: &[u64]) -> Self {
        Self::new(seed, stream_key(key))
    }

    /// Child stream under the same seed, addressed relative to this stream.
    pub fn child(&self, key: &[u64]) -> Self {
        let mut full = Vec::with_capacity(key.len() + 1);
        full.push(self.stream_id);
        full.extend_from_slice(key);
        Self::keyed(self.seed, &full)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n` (`n > 0`).
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's widening multiply; bias is below 2^-64 · n.
        ((self.rng.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// SplitMix64 finalizer folded over the key components.
pub fn stream_key(key: &[u64]) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &k in key {
        h ^= k;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

/// I.i.d. zero-mean Gaussian draws with standard deviation `std`.
///
/// Draws are `std · z` with `z` standard normal, so for a fixed stream the
/// output scales exactly with `std`.
pub fn gaussian_sample(len: usize, std: f64, rng: &mut RngStream) -> Result<Vector> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(invalid(format!(
            "gaussian std must be finite and >= 0, got {std}"
        )));
    }
    if std == 0.0 {
        return Ok(vec![0.0; len]);
    }
    Ok((0..len).map(|_| std * rng.standard_normal()).collect())
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_gradient<F>(f: F, x: &[f64], h: f64) -> Result<Vector>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let orig = probe[k];
        probe[k] = orig + h;
        let plus = f(&probe);
        probe[k] = orig - h;
        let minus = f(&probe);
        probe[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite);
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}
