use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::rng::{self, Rng};
use super::{Parameter, Scalar, Tensor};

/// GELU variant used throughout; recorded in run metadata.
pub const GELU_VARIANT: &str = "exact-erf";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let dot = arow.iter().zip(brow).fold(T::zero(), |s, (&x, &y)| s + x * y);
            out[i * n + j] = out[i * n + j] + dot;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub fn gemm_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// Matrix product. Accepts `[m,k]×[k,n]`, `[B,m,k]×[k,n]` and `[B,m,k]×[B,k,n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mismatch = || Error::Shape {
        op: "matmul",
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    };
    match (a.shape(), b.shape()) {
        (&[m, k], &[k2, n]) => {
            if k != k2 {
                return Err(mismatch());
            }
            let mut out = Tensor::zeros(&[m, n]);
            gemm_nn(a.data(), b.data(), m, k, n, out.data_mut());
            Ok(out)
        }
        (&[batch, m, k], &[k2, n]) => {
            if k != k2 {
                return Err(mismatch());
            }
            let mut out = Tensor::zeros(&[batch, m, n]);
            gemm_nn(a.data(), b.data(), batch * m, k, n, out.data_mut());
            Ok(out)
        }
        (&[batch, m, k], &[batch2, k2, n]) => {
            if k != k2 || batch != batch2 {
                return Err(mismatch());
            }
            let mut out = Tensor::zeros(&[batch, m, n]);
            for bi in 0..batch {
                gemm_nn(
                    &a.data()[bi * m * k..(bi + 1) * m * k],
                    &b.data()[bi * k * n..(bi + 1) * k * n],
                    m,
                    k,
                    n,
                    &mut out.data_mut()[bi * m * n..(bi + 1) * m * n],
                );
            }
            Ok(out)
        }
        _ => Err(mismatch()),
    }
}

/// Numerically stable log-softmax over each contiguous row of width `n`, in place.
pub fn log_softmax_rows<T: Scalar>(data: &mut [T], n: usize) {
    for row in data.chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
        row.iter_mut().for_each(|x| *x = *x - lse);
    }
}

/// Softmax over each contiguous row of width `n`, in place.
pub fn softmax_rows<T: Scalar>(data: &mut [T], n: usize) {
    for row in data.chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum = sum + *x;
        }
        row.iter_mut().for_each(|x| *x = *x / sum);
    }
}

/// Log-softmax along the last axis.
pub fn log_softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let n = x.last_dim();
    if n == 0 {
        return Err(Error::arg("log_softmax over an empty axis"));
    }
    let mut out = x.clone();
    log_softmax_rows(out.data_mut(), n);
    Ok(out)
}

/// Gradient of log-softmax given its output: `dx = dy − softmax · Σdy` per row.
pub fn log_softmax_backward<T: Scalar>(log_probs: &[T], dy: &[T], n: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); dy.len()];
    for ((lp, g), out) in log_probs
        .chunks(n)
        .zip(dy.chunks(n))
        .zip(dx.chunks_mut(n))
    {
        let total: T = g.iter().copied().sum();
        for i in 0..n {
            out[i] = g[i] - lp[i].exp() * total;
        }
    }
    dx
}

/// `x · Φ(x)` with the exact normal CDF.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    x * half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// `d/dx [x · Φ(x)] = Φ(x) + x · φ(x)`
#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

/// Normalized rows and inverse standard deviations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

/// Per-row normalization over the last axis followed by `gain ⊙ x̂ + bias`.
pub fn layer_norm<T: Scalar>(
    x: &[T],
    d: usize,
    gain: &[T],
    bias: &[T],
    eps: f64,
) -> (Vec<T>, LayerNormCache<T>) {
    assert!(d >= 1 && gain.len() == d && bias.len() == d);
    let rows = x.len() / d;
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().map(|v| v.f64()).sum::<f64>() / d as f64;
        let var = row
            .iter()
            .map(|v| {
                let c = v.f64() - mean;
                c * c
            })
            .sum::<f64>()
            / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        rstd[r] = T::of(inv);
        for i in 0..d {
            let h = T::of((row[i].f64() - mean) * inv);
            xhat[r * d + i] = h;
            out[r * d + i] = gain[i] * h + bias[i];
        }
    }
    (out, LayerNormCache { xhat, rstd })
}

/// Backward of [`layer_norm`]; accumulates into `dgain`/`dbias` and returns `dx`.
pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &LayerNormCache<T>,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let d = gain.len();
    let rows = dy.len() / d;
    let mut dx = vec![T::zero(); dy.len()];
    let inv_d = T::of(1.0 / d as f64);
    for r in 0..rows {
        let g = &dy[r * d..(r + 1) * d];
        let h = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dh = T::zero();
        let mut mean_dh_h = T::zero();
        for i in 0..d {
            let dh = g[i] * gain[i];
            mean_dh = mean_dh + dh;
            mean_dh_h = mean_dh_h + dh * h[i];
            dgain[i] = dgain[i] + g[i] * h[i];
            dbias[i] = dbias[i] + g[i];
        }
        mean_dh = mean_dh * inv_d;
        mean_dh_h = mean_dh_h * inv_d;
        let rs = cache.rstd[r];
        for i in 0..d {
            let dh = g[i] * gain[i];
            dx[r * d + i] = rs * (dh - mean_dh - h[i] * mean_dh_h);
        }
    }
    dx
}

/// `y[n×out] = x[n×in] · Wᵀ + b` for `W: [out, in]`.
pub fn linear<T: Scalar>(x: &[T], w: &Parameter<T>, b: &Parameter<T>) -> Vec<T> {
    let (out_dim, in_dim) = (w.value.shape()[0], w.value.shape()[1]);
    let n = x.len() / in_dim;
    let mut y = vec![T::zero(); n * out_dim];
    gemm_nt(x, w.value.data(), n, in_dim, out_dim, &mut y);
    let bias = b.value.data();
    for row in y.chunks_mut(out_dim) {
        for (v, &bb) in row.iter_mut().zip(bias) {
            *v = *v + bb;
        }
    }
    y
}

/// Accumulates weight/bias grads of [`linear`] and returns `dx`.
pub fn linear_backward<T: Scalar>(x: &[T], dy: &[T], w: &mut Parameter<T>, b: &mut Parameter<T>) -> Vec<T> {
    let (out_dim, in_dim) = (w.value.shape()[0], w.value.shape()[1]);
    let n = x.len() / in_dim;
    gemm_tn(dy, x, n, out_dim, in_dim, w.grad.data_mut());
    let db = b.grad.data_mut();
    for row in dy.chunks(out_dim) {
        for (g, &d) in db.iter_mut().zip(row) {
            *g = *g + d;
        }
    }
    let mut dx = vec![T::zero(); n * in_dim];
    gemm_nn(dy, w.value.data(), n, out_dim, in_dim, &mut dx);
    dx
}

/// Inverted-dropout multipliers: 0 for dropped entries, `1/(1−rate)` for kept ones.
#[derive(Clone, Debug)]
pub struct DropoutMask<T> {
    pub scale: Vec<T>,
}

impl<T: Scalar> DropoutMask<T> {
    /// Returns `None` when dropout is inactive (eval mode or rate 0).
    pub fn sample(len: usize, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Option<Self>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::arg(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(None);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let scale = (0..len)
            .map(|_| {
                if rng::unit_f64(rng) < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        Ok(Some(DropoutMask { scale }))
    }

    pub fn apply(&self, x: &mut [T]) {
        for (v, &s) in x.iter_mut().zip(&self.scale) {
            *v = *v * s;
        }
    }
}

/// Inverted dropout on a whole tensor.
pub fn dropout<T: Scalar>(x: &Tensor<T>, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
    let mut out = x.clone();
    if let Some(mask) = DropoutMask::sample(x.len(), rate, mode, rng)? {
        mask.apply(out.data_mut());
    }
    Ok(out)
}
