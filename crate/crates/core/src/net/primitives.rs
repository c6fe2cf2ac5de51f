//! Differentiable building blocks: affine layers, group normalization,
//! SiLU and dropout, each with a hand-derived backward pass.
//!
//! Batches are row-major `(batch, channels)`. Forward functions return
//! whatever the matching backward needs (normalized activations, sigmoid
//! values, dropout multipliers), so no primitive recomputes its own
//! intermediates during the reverse sweep.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::element::Element;
use crate::error::{Error, Result};

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// `y = x w + b`, weights `(in, out)`.
pub fn linear_forward<T: Element>(x: &Array2<T>, w: &Array2<T>, b: &Array1<T>) -> Result<Array2<T>> {
    if x.ncols() != w.nrows() {
        return Err(Error::shape("linear input", w.nrows(), x.ncols()));
    }
    if w.ncols() != b.len() {
        return Err(Error::shape("linear bias", w.ncols(), b.len()));
    }
    let mut y = x.dot(w);
    y += b;
    Ok(y)
}

/// Gradients of a linear layer. Returns `(dx, dw, db)`; `dx` is skipped
/// when the input is a leaf (data, frozen features).
pub fn linear_backward<T: Element>(
    x: &Array2<T>,
    w: &Array2<T>,
    dy: &Array2<T>,
    need_dx: bool,
) -> (Option<Array2<T>>, Array2<T>, Array1<T>) {
    let mut dw = Array2::zeros((w.nrows(), w.ncols()));
    general_mat_mul(T::one(), &x.t(), dy, T::zero(), &mut dw);
    let db = dy.sum_axis(Axis(0));
    let dx = if need_dx {
        let mut dx = Array2::zeros((x.nrows(), x.ncols()));
        general_mat_mul(T::one(), dy, &w.t(), T::zero(), &mut dx);
        Some(dx)
    } else {
        None
    };
    (dx, dw, db)
}

/// Per-row group normalization with per-channel affine.
///
/// Returns `(y, xhat, inv_std)`; `xhat` is the pre-affine normalized
/// activation, `inv_std` is `(batch, groups)`.
pub fn group_norm_forward<T: Element>(
    x: &Array2<T>,
    groups: usize,
    scale: &Array1<T>,
    shift: &Array1<T>,
    eps: f64,
) -> Result<(Array2<T>, Array2<T>, Array2<T>)> {
    let (b, c) = x.dim();
    if groups == 0 || c % groups != 0 {
        return Err(Error::validation(format!(
            "group_norm: {groups} groups do not divide {c} channels"
        )));
    }
    if scale.len() != c || shift.len() != c {
        return Err(Error::shape("group_norm affine", c, scale.len()));
    }
    let gsize = c / groups;
    let inv_gsize = T::from_f64(1.0 / gsize as f64);
    let eps = T::from_f64(eps);

    let mut xhat = Array2::zeros((b, c));
    let mut istd = Array2::zeros((b, groups));
    let mut y = Array2::zeros((b, c));
    let xs = x.as_slice().unwrap();
    let xh = xhat.as_slice_mut().unwrap();
    let ys = y.as_slice_mut().unwrap();
    let sc = scale.as_slice().unwrap();
    let sh = shift.as_slice().unwrap();
    for row in 0..b {
        let base = row * c;
        for g in 0..groups {
            let lo = base + g * gsize;
            let hi = lo + gsize;
            let mut mean = T::zero();
            for &v in &xs[lo..hi] {
                mean = mean + v;
            }
            mean = mean * inv_gsize;
            let mut var = T::zero();
            for &v in &xs[lo..hi] {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * inv_gsize;
            let inv = (var + eps).sqrt().recip();
            istd[[row, g]] = inv;
            for k in lo..hi {
                let ch = k - base;
                let h = (xs[k] - mean) * inv;
                xh[k] = h;
                ys[k] = sc[ch] * h + sh[ch];
            }
        }
    }
    Ok((y, xhat, istd))
}

/// Backward of group normalization. Returns `(dx, dscale, dshift)`.
pub fn group_norm_backward<T: Element>(
    dy: &Array2<T>,
    xhat: &Array2<T>,
    istd: &Array2<T>,
    scale: &Array1<T>,
) -> (Array2<T>, Array1<T>, Array1<T>) {
    let (b, c) = dy.dim();
    let groups = istd.ncols();
    let gsize = c / groups;
    let inv_gsize = T::from_f64(1.0 / gsize as f64);

    let mut dscale = Array1::zeros(c);
    let mut dshift = Array1::zeros(c);
    let mut dx = Array2::zeros((b, c));
    let dys = dy.as_slice().unwrap();
    let xh = xhat.as_slice().unwrap();
    let dxs = dx.as_slice_mut().unwrap();
    let dsc = dscale.as_slice_mut().unwrap();
    let dsh = dshift.as_slice_mut().unwrap();
    let sc = scale.as_slice().unwrap();
    for row in 0..b {
        let base = row * c;
        for g in 0..groups {
            let lo = base + g * gsize;
            let hi = lo + gsize;
            let inv = istd[[row, g]];
            // dxhat = dy * scale; accumulate its group means.
            let mut m1 = T::zero();
            let mut m2 = T::zero();
            for k in lo..hi {
                let ch = k - base;
                let dxh = dys[k] * sc[ch];
                m1 = m1 + dxh;
                m2 = m2 + dxh * xh[k];
                dsc[ch] = dsc[ch] + dys[k] * xh[k];
                dsh[ch] = dsh[ch] + dys[k];
            }
            m1 = m1 * inv_gsize;
            m2 = m2 * inv_gsize;
            for k in lo..hi {
                let ch = k - base;
                let dxh = dys[k] * sc[ch];
                dxs[k] = inv * (dxh - m1 - xh[k] * m2);
            }
        }
    }
    (dx, dscale, dshift)
}

/// SiLU `x * sigmoid(x)`. Returns `(y, sigmoid)`.
pub fn silu_forward<T: Element>(x: &Array2<T>) -> (Array2<T>, Array2<T>) {
    let sig = x.mapv(|v| (T::one() + (-v).exp()).recip());
    let y = x * &sig;
    (y, sig)
}

/// Backward of SiLU from the cached input and sigmoid values.
pub fn silu_backward<T: Element>(dy: &Array2<T>, x: &Array2<T>, sig: &Array2<T>) -> Array2<T> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx)
        .and(x)
        .and(sig)
        .for_each(|d, &xv, &sv| {
            *d = *d * sv * (T::one() + xv * (T::one() - sv));
        });
    dx
}

/// Inverted dropout. Returns `(y, multiplier)` where the multiplier is
/// `0` for dropped units and `1/(1-rate)` for survivors; multiplying by
/// it is both the forward map and the backward map.
pub fn dropout_forward<T: Element, R: Rng>(
    x: &Array2<T>,
    rate: f64,
    rng: &mut R,
) -> Result<(Array2<T>, Array2<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::validation(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if rate == 0.0 {
        return Ok((x.clone(), Array2::from_elem(x.dim(), T::one())));
    }
    let keep_scale = T::from_f64(1.0 / (1.0 - rate));
    let mask = Array2::from_shape_simple_fn(x.dim(), || {
        if rng.gen::<f64>() < rate {
            T::zero()
        } else {
            keep_scale
        }
    });
    Ok((x * &mask, mask))
}

pub fn dropout_backward<T: Element>(dy: &Array2<T>, mask: &Array2<T>) -> Array2<T> {
    dy * mask
}
