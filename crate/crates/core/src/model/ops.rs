//! Dense kernels shared by the forward pass and its adjoints. Matrices are
//! row-major; a weight `w` of shape `[out, in]` maps a row `x[in]` to
//! `y[out] = w · x`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Floating-point element type of the model (`f32` for training and
/// inference, `f64` for gradient checks).
pub trait Real:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub fn c<T: Real>(v: f64) -> T {
    T::from_f64(v).unwrap()
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y[r] = w · x[r] + b` for each of `rows` rows.
pub fn linear<T: Real>(x: &[T], rows: usize, w: &[T], out: usize, b: Option<&[T]>) -> Vec<T> {
    let inp = w.len() / out;
    debug_assert_eq!(x.len(), rows * inp);
    let mut y = vec![T::zero(); rows * out];
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        let yr = &mut y[r * out..(r + 1) * out];
        for o in 0..out {
            yr[o] = dot(&w[o * inp..(o + 1) * inp], xr);
        }
        if let Some(b) = b {
            for o in 0..out {
                yr[o] += b[o];
            }
        }
    }
    y
}

/// Adjoint of [`linear`]: accumulates `dw += dyᵀ x`, `db += Σ dy` and, when
/// requested, `dx += dy w`.
pub fn linear_backward<T: Real>(
    dy: &[T],
    x: &[T],
    rows: usize,
    w: &[T],
    out: usize,
    dw: &mut [T],
    db: Option<&mut [T]>,
    dx: Option<&mut [T]>,
) {
    let inp = w.len() / out;
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        let dyr = &dy[r * out..(r + 1) * out];
        for o in 0..out {
            let g = dyr[o];
            if g != T::zero() {
                axpy(g, xr, &mut dw[o * inp..(o + 1) * inp]);
            }
        }
    }
    if let Some(db) = db {
        for r in 0..rows {
            for o in 0..out {
                db[o] += dy[r * out + o];
            }
        }
    }
    if let Some(dx) = dx {
        for r in 0..rows {
            let dxr = &mut dx[r * inp..(r + 1) * inp];
            let dyr = &dy[r * out..(r + 1) * out];
            for o in 0..out {
                let g = dyr[o];
                if g != T::zero() {
                    axpy(g, &w[o * inp..(o + 1) * inp], dxr);
                }
            }
        }
    }
}

pub const NORM_EPS: f64 = 1e-5;

/// Gain-only LayerNorm over rows of width `n`. Returns `(y, x̂, 1/σ)`.
pub fn layer_norm<T: Real>(x: &[T], n: usize, gain: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / n;
    let inv_n = c::<T>(1.0 / n as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * n..(r + 1) * n];
        let mean = xr.iter().copied().sum::<T>() * inv_n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let is = T::one() / (var + c(NORM_EPS)).sqrt();
        inv_std[r] = is;
        for j in 0..n {
            let h = (xr[j] - mean) * is;
            xhat[r * n + j] = h;
            y[r * n + j] = h * gain[j];
        }
    }
    (y, xhat, inv_std)
}

pub fn layer_norm_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    n: usize,
    gain: &[T],
    dgain: &mut [T],
) -> Vec<T> {
    let rows = dy.len() / n;
    let inv_n = c::<T>(1.0 / n as f64);
    let mut dx = vec![T::zero(); dy.len()];
    for r in 0..rows {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for j in 0..n {
            let i = r * n + j;
            dgain[j] += dy[i] * xhat[i];
            let g = dy[i] * gain[j];
            sum_g += g;
            sum_gx += g * xhat[i];
        }
        let mg = sum_g * inv_n;
        let mgx = sum_gx * inv_n;
        for j in 0..n {
            let i = r * n + j;
            dx[i] = inv_std[r] * (dy[i] * gain[j] - mg - xhat[i] * mgx);
        }
    }
    dx
}

/// RMSNorm over rows of width `n`. Returns `(y, 1/rms)`.
pub fn rms_norm<T: Real>(x: &[T], n: usize, gain: &[T]) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / n;
    let inv_n = c::<T>(1.0 / n as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut inv = vec![T::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * n..(r + 1) * n];
        let ms = dot(xr, xr) * inv_n;
        let ir = T::one() / (ms + c(NORM_EPS)).sqrt();
        inv[r] = ir;
        for j in 0..n {
            y[r * n + j] = xr[j] * ir * gain[j];
        }
    }
    (y, inv)
}

pub fn rms_norm_backward<T: Real>(
    dy: &[T],
    x: &[T],
    inv_rms: &[T],
    n: usize,
    gain: &[T],
    dgain: &mut [T],
) -> Vec<T> {
    let rows = dy.len() / n;
    let inv_n = c::<T>(1.0 / n as f64);
    let mut dx = vec![T::zero(); dy.len()];
    for r in 0..rows {
        let ir = inv_rms[r];
        let mut s = T::zero();
        for j in 0..n {
            let i = r * n + j;
            dgain[j] += dy[i] * x[i] * ir;
            s += dy[i] * gain[j] * x[i];
        }
        let k = s * ir * ir * ir * inv_n;
        for j in 0..n {
            let i = r * n + j;
            dx[i] = dy[i] * gain[j] * ir - x[i] * k;
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let u = c::<T>(GELU_C) * (x + c::<T>(GELU_A) * x * x * x);
    c::<T>(0.5) * x * (T::one() + u.tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let u = c::<T>(GELU_C) * (x + c::<T>(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = c::<T>(GELU_C) * (T::one() + c::<T>(3.0 * GELU_A) * x * x);
    c::<T>(0.5) * (T::one() + t) + c::<T>(0.5) * x * (T::one() - t * t) * du
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > c(20.0) {
        x
    } else if x < c(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}
