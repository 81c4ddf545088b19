//! Forward kernels on plain tensors. The tape wraps these and adds the
//! matching backward rules.

use super::{NumericsError, Scalar, Tensor};

fn require_rank2<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize), NumericsError> {
    if t.rank() != 2 {
        return Err(NumericsError::InvalidArgument {
            op,
            detail: format!("expected a matrix, got shape {:?}", t.shape()),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

#[derive(Clone, Copy)]
enum Layout {
    Normal,
    Transposed,
}

/// Dispatches to the strided gemm; `a` is viewed as m×k and `b` as k×n.
fn gemm_into<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_layout: Layout,
    b: &[T],
    b_layout: Layout,
    out: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out[..m * n].iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let (rsa, csa) = match a_layout {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match b_layout {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    // SAFETY: the asserts above guarantee every strided access is in bounds.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            T::zero(),
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `a[m×k] · b[k×n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (m, k) = require_rank2("matmul", a)?;
    let (k2, n) = require_rank2("matmul", b)?;
    if k != k2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    gemm_into(m, k, n, a.data(), Layout::Normal, b.data(), Layout::Normal, &mut out);
    Tensor::new(vec![m, n], out)
}

/// `a[m×k] · b[n×k]ᵀ`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (m, k) = require_rank2("matmul_nt", a)?;
    let (n, k2) = require_rank2("matmul_nt", b)?;
    if k != k2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul_nt",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    gemm_into(m, k, n, a.data(), Layout::Normal, b.data(), Layout::Transposed, &mut out);
    Tensor::new(vec![m, n], out)
}

/// `a[k×m]ᵀ · b[k×n]`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (k, m) = require_rank2("matmul_tn", a)?;
    let (k2, n) = require_rank2("matmul_tn", b)?;
    if k != k2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul_tn",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    gemm_into(m, k, n, a.data(), Layout::Transposed, b.data(), Layout::Normal, &mut out);
    Tensor::new(vec![m, n], out)
}

/// Softmax along `axis` with max subtraction.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>, NumericsError> {
    if axis >= x.rank().max(1) {
        return Err(NumericsError::InvalidArgument {
            op: "softmax",
            detail: format!("axis {axis} out of range for shape {:?}", x.shape()),
        });
    }
    let shape = if x.rank() == 0 { vec![1] } else { x.shape().to_vec() };
    let size = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.data().to_vec();
    let mut lane = vec![T::zero(); size];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * size * inner + i;
            for (s, slot) in lane.iter_mut().enumerate() {
                *slot = out[base + s * inner];
            }
            softmax_lane(&mut lane, None).map_err(|_| NumericsError::MaskedRow { row: o * inner + i })?;
            for (s, v) in lane.iter().enumerate() {
                out[base + s * inner] = *v;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// In-place softmax of one lane. Entries where `keep[j]` is false (or whose
/// value is -inf) get probability zero; a lane with nothing left is an error.
pub(crate) fn softmax_lane<T: Scalar>(lane: &mut [T], keep: Option<&[bool]>) -> Result<(), ()> {
    let live = |j: usize, v: T| keep.is_none_or(|k| k[j]) && v != T::neg_infinity();
    let mut max = T::neg_infinity();
    for (j, &v) in lane.iter().enumerate() {
        if live(j, v) && v > max {
            max = v;
        }
    }
    if max == T::neg_infinity() {
        return Err(());
    }
    let mut total = T::zero();
    for j in 0..lane.len() {
        let v = lane[j];
        let e = if live(j, v) { (v - max).exp() } else { T::zero() };
        lane[j] = e;
        total = total + e;
    }
    for v in lane.iter_mut() {
        *v = *v / total;
    }
    Ok(())
}

/// Row-wise softmax of a matrix with an optional per-column keep mask.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>, keep: Option<&[bool]>) -> Result<Tensor<T>, NumericsError> {
    let cols = x.cols();
    if let Some(k) = keep {
        if k.len() != cols {
            return Err(NumericsError::InvalidArgument {
                op: "softmax_rows",
                detail: format!("mask has {} entries for {cols} columns", k.len()),
            });
        }
    }
    let mut out = x.clone();
    for r in 0..x.rows() {
        softmax_lane(out.row_mut(r), keep).map_err(|_| NumericsError::MaskedRow { row: r })?;
    }
    Ok(out)
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact erf-based GELU: `x · Φ(x)`.
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    x * half * (T::one() + (x * T::of(INV_SQRT_2)).erf())
}

/// `d/dx gelu(x) = Φ(x) + x·φ(x)`.
pub fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(INV_SQRT_2)).erf());
    let pdf = T::of(INV_SQRT_2PI) * (-(x * x) * T::of(0.5)).exp();
    cdf + x * pdf
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

/// Normalized rows plus the per-row inverse standard deviation, which the
/// backward rule reuses.
pub(crate) struct Normalized<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn normalize_rows<T: Scalar>(x: &Tensor<T>, eps: f64) -> Normalized<T> {
    let d = x.cols();
    let dn = T::of(d as f64);
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = xhat.row_mut(r);
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let inv = T::one() / (var + T::of(eps)).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
        inv_std.push(inv);
    }
    Normalized { xhat, inv_std }
}

/// Layer normalization over the last axis with eps inside the square root.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>, NumericsError> {
    let d = x.cols();
    if gain.len() != d || bias.len() != d {
        return Err(NumericsError::ShapeMismatch {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    let mut out = normalize_rows(x, eps).xhat;
    for r in 0..out.rows() {
        for (j, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = *v * gain.data()[j] + bias.data()[j];
        }
    }
    Ok(out)
}
