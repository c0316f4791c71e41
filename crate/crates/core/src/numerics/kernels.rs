//! Raw slice kernels shared by the eager tensor functions and the tape.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `C (+)= A·B` for an `m×k` by `k×n` product. Each operand is described by
/// its `(row_stride, col_stride)` so transposed views need no copies.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (ars, acs): (usize, usize),
    b: &[f64],
    (brs, bcs): (usize, usize),
    c: &mut [f64],
    (crs, ccs): (usize, usize),
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    // SAFETY: strides describe views that stay inside the provided slices;
    // callers pass buffers sized from the same (m, k, n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            ars as isize,
            acs as isize,
            b.as_ptr(),
            brs as isize,
            bcs as isize,
            beta,
            c.as_mut_ptr(),
            crs as isize,
            ccs as isize,
        );
    }
}

fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

pub(crate) fn softmax_axis(x: &mut [f64], shape: &[usize], axis: usize) {
    let (outer, len, inner) = axis_layout(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let idx = |j: usize| base + j * inner;
            let max = (0..len).map(|j| x[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..len {
                let e = (x[idx(j)] - max).exp();
                x[idx(j)] = e;
                sum += e;
            }
            for j in 0..len {
                x[idx(j)] /= sum;
            }
        }
    }
}

/// `dx += y ⊙ (dy − Σ_axis dy ⊙ y)`.
pub(crate) fn softmax_axis_backward(
    y: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    shape: &[usize],
    axis: usize,
) {
    let (outer, len, inner) = axis_layout(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let dot: f64 = (0..len)
                .map(|j| {
                    let p = base + j * inner;
                    dy[p] * y[p]
                })
                .sum();
            for j in 0..len {
                let p = base + j * inner;
                dx[p] += y[p] * (dy[p] - dot);
            }
        }
    }
}

/// Row statistics saved by the forward pass: (mean, 1/sqrt(var + eps)).
pub(crate) type RowStats = Vec<(f64, f64)>;

pub(crate) fn layer_norm_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    d: usize,
    eps: f64,
    out: &mut [f64],
    mut stats: Option<&mut RowStats>,
) {
    for (xr, yr) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        for j in 0..d {
            yr[j] = (xr[j] - mean) * rstd * gamma[j] + beta[j];
        }
        if let Some(s) = stats.as_deref_mut() {
            s.push((mean, rstd));
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward(
    x: &[f64],
    gamma: &[f64],
    stats: &RowStats,
    dy: &[f64],
    d: usize,
    dx: Option<&mut [f64]>,
    dgamma: Option<&mut [f64]>,
    dbeta: Option<&mut [f64]>,
) {
    let mut dx = dx;
    let mut dgamma = dgamma;
    let mut dbeta = dbeta;
    let mut xhat = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for (r, (xr, dyr)) in x.chunks_exact(d).zip(dy.chunks_exact(d)).enumerate() {
        let (mean, rstd) = stats[r];
        for j in 0..d {
            xhat[j] = (xr[j] - mean) * rstd;
            dxhat[j] = dyr[j] * gamma[j];
        }
        if let Some(g) = dgamma.as_deref_mut() {
            for j in 0..d {
                g[j] += dyr[j] * xhat[j];
            }
        }
        if let Some(b) = dbeta.as_deref_mut() {
            for j in 0..d {
                b[j] += dyr[j];
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let m1 = dxhat.iter().sum::<f64>() / d as f64;
            let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            let dxr = &mut dx[r * d..(r + 1) * d];
            for j in 0..d {
                dxr[j] += rstd * (dxhat[j] - m1 - xhat[j] * m2);
            }
        }
    }
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub(crate) fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub(crate) fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Row-wise log-softmax of a `rows×cols` buffer.
pub(crate) fn log_softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (xr, yr) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + xr.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (y, v) in yr.iter_mut().zip(xr) {
            *y = v - lse;
        }
    }
    out
}
