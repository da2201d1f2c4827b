//! Elementwise, shape, and reduction operations.
//!
//! Binary operations broadcast over singleton axes numpy-style: shapes are
//! right-aligned and each axis pair must match or one side must be 1. The
//! backward of a broadcast op sum-reduces the adjoint over the expanded axes.

use std::collections::HashMap;

use super::{accumulate, DiffTensor, Op, Result, TensorError};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Standard normal CDF, exact erf form.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}

#[inline]
fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Right-aligned broadcast of two shapes. On failure names the offending
/// axis in the coordinates of the broader shape.
pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(TensorError::ShapeMismatch {
                axis: i,
                left: a.to_vec(),
                right: b.to_vec(),
            });
        };
    }
    Ok(out)
}

/// Row-major strides with zeros on broadcast (extent-1) axes, padded to rank.
fn bcast_strides(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut strides = vec![0usize; rank];
    let offset = rank - shape.len();
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Apply `f` elementwise over the broadcast of `a` and `b`.
fn bcast_map(
    a: &DiffTensor,
    b: &DiffTensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if a.shape() == b.shape() {
        let out = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| f(*x, *y))
            .collect();
        return Ok((a.shape().to_vec(), out));
    }
    let shape = broadcast_shapes(a.shape(), b.shape())?;
    let rank = shape.len();
    let sa = bcast_strides(a.shape(), rank);
    let sb = bcast_strides(b.shape(), rank);
    let n: usize = shape.iter().product();
    let mut out = vec![0.0; n];
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let (av, bv) = (a.values(), b.values());
    for slot in out.iter_mut() {
        *slot = f(av[oa], bv[ob]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
            oa -= sa[ax] * shape[ax];
            ob -= sb[ax] * shape[ax];
        }
    }
    Ok((shape, out))
}

/// Reduce an adjoint on the broadcast shape back onto an operand's shape.
fn bcast_reduce(
    adj_vals: &[f64],
    out_shape: &[usize],
    operand_shape: &[usize],
    weight: impl Fn(usize) -> f64,
) -> Vec<f64> {
    let n_op: usize = operand_shape.iter().product();
    if operand_shape == out_shape {
        return adj_vals
            .iter()
            .enumerate()
            .map(|(i, a)| a * weight(i))
            .collect();
    }
    let rank = out_shape.len();
    let strides = bcast_strides(operand_shape, rank);
    let mut out = vec![0.0; n_op];
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for (i, a) in adj_vals.iter().enumerate() {
        out[off] += a * weight(i);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
            off -= strides[ax] * out_shape[ax];
        }
    }
    out
}

impl DiffTensor {
    pub fn add(&self, rhs: &DiffTensor) -> Result<DiffTensor> {
        let (shape, vals) = bcast_map(self, rhs, |x, y| x + y)?;
        Ok(DiffTensor::from_op(shape, vals, Op::Add(self.clone(), rhs.clone())))
    }

    pub fn sub(&self, rhs: &DiffTensor) -> Result<DiffTensor> {
        let (shape, vals) = bcast_map(self, rhs, |x, y| x - y)?;
        Ok(DiffTensor::from_op(shape, vals, Op::Sub(self.clone(), rhs.clone())))
    }

    pub fn mul(&self, rhs: &DiffTensor) -> Result<DiffTensor> {
        let (shape, vals) = bcast_map(self, rhs, |x, y| x * y)?;
        Ok(DiffTensor::from_op(shape, vals, Op::Mul(self.clone(), rhs.clone())))
    }

    pub fn div(&self, rhs: &DiffTensor) -> Result<DiffTensor> {
        let (shape, vals) = bcast_map(self, rhs, |x, y| x / y)?;
        Ok(DiffTensor::from_op(shape, vals, Op::Div(self.clone(), rhs.clone())))
    }

    pub fn neg(&self) -> DiffTensor {
        let vals = self.values().iter().map(|x| -x).collect();
        DiffTensor::from_op(self.shape().to_vec(), vals, Op::Neg(self.clone()))
    }

    pub fn exp(&self) -> DiffTensor {
        let vals = self.values().iter().map(|x| x.exp()).collect();
        DiffTensor::from_op(self.shape().to_vec(), vals, Op::Exp(self.clone()))
    }

    pub fn scale(&self, k: f64) -> DiffTensor {
        let vals = self.values().iter().map(|x| k * x).collect();
        DiffTensor::from_op(self.shape().to_vec(), vals, Op::Scale(self.clone(), k))
    }

    /// Numerically stable ln(1 + e^x); smooth and strictly positive.
    pub fn softplus(&self) -> DiffTensor {
        let vals = self
            .values()
            .iter()
            .map(|&x| x.max(0.0) + (-x.abs()).exp().ln_1p())
            .collect();
        DiffTensor::from_op(self.shape().to_vec(), vals, Op::Softplus(self.clone()))
    }

    /// Exact-erf GELU, x * Phi(x).
    pub fn gelu(&self) -> DiffTensor {
        let phi: Vec<f64> = self.values().iter().map(|&x| norm_cdf(x)).collect();
        let vals = self
            .values()
            .iter()
            .zip(&phi)
            .map(|(x, p)| x * p)
            .collect();
        DiffTensor::from_op(self.shape().to_vec(), vals, Op::Gelu(self.clone(), phi))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<DiffTensor> {
        let to_n: usize = shape.iter().product();
        if to_n != self.numel() {
            return Err(TensorError::ReshapeMismatch {
                from: self.shape().to_vec(),
                from_n: self.numel(),
                to: shape.to_vec(),
                to_n,
            });
        }
        Ok(DiffTensor::from_op(
            shape.to_vec(),
            self.values().to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    /// Contiguous slice [start, start+len) along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<DiffTensor> {
        let rank = self.shape().len();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { axis, rank });
        }
        let extent = self.shape()[axis];
        if start + len > extent {
            return Err(TensorError::NarrowOutOfRange {
                axis,
                start,
                len,
                extent,
            });
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut vals = Vec::with_capacity(outer * len * inner);
        let src = self.values();
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            vals.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(DiffTensor::from_op(
            shape,
            vals,
            Op::Narrow {
                input: self.clone(),
                axis,
                start,
                len,
            },
        ))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[DiffTensor], axis: usize) -> Result<DiffTensor> {
        if parts.is_empty() {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: "no tensors given".into(),
            });
        }
        let rank = parts[0].shape().len();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { axis, rank });
        }
        for p in parts.iter().skip(1) {
            if p.shape().len() != rank {
                return Err(TensorError::RankMismatch {
                    want: rank,
                    shape: p.shape().to_vec(),
                });
            }
            for ax in 0..rank {
                if ax != axis && p.shape()[ax] != parts[0].shape()[ax] {
                    return Err(TensorError::ShapeMismatch {
                        axis: ax,
                        left: parts[0].shape().to_vec(),
                        right: p.shape().to_vec(),
                    });
                }
            }
        }
        let mut shape = parts[0].shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut vals = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let ext = p.shape()[axis];
                let src = p.values();
                vals.extend_from_slice(&src[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        Ok(DiffTensor::from_op(shape, vals, Op::Concat(parts.to_vec(), axis)))
    }

    /// Sum of every element, as a single-element tensor.
    pub fn sum_all(&self) -> DiffTensor {
        let s: f64 = self.values().iter().sum();
        DiffTensor::from_op(vec![1], vec![s], Op::SumAll(self.clone()))
    }

    /// Global average over the two trailing spatial axes: (B,C,H,W) -> (B,C).
    pub fn mean_pool_spatial(&self) -> Result<DiffTensor> {
        let [b, c, h, w] = *self.shape() else {
            return Err(TensorError::RankMismatch {
                want: 4,
                shape: self.shape().to_vec(),
            });
        };
        let hw = h * w;
        let inv = 1.0 / hw as f64;
        let src = self.values();
        let mut vals = vec![0.0; b * c];
        for bc in 0..b * c {
            let mut acc = 0.0;
            for i in 0..hw {
                acc += src[bc * hw + i];
            }
            vals[bc] = acc * inv;
        }
        Ok(DiffTensor::from_op(
            vec![b, c],
            vals,
            Op::MeanPoolSpatial(self.clone()),
        ))
    }
}

/// Push one node's adjoint into its inputs. Called in reverse topological
/// order, so each node is processed exactly once per backward sweep.
pub(crate) fn backward_op(
    node: &DiffTensor,
    op: &Op,
    adj: &[f64],
    adjoint: &mut HashMap<u64, Vec<f64>>,
) {
    match op {
        Op::Add(a, b) => {
            let out_shape = node.shape();
            accumulate(adjoint, a, bcast_reduce(adj, out_shape, a.shape(), |_| 1.0));
            accumulate(adjoint, b, bcast_reduce(adj, out_shape, b.shape(), |_| 1.0));
        }
        Op::Sub(a, b) => {
            let out_shape = node.shape();
            accumulate(adjoint, a, bcast_reduce(adj, out_shape, a.shape(), |_| 1.0));
            let db: Vec<f64> = bcast_reduce(adj, out_shape, b.shape(), |_| 1.0)
                .into_iter()
                .map(|x| -x)
                .collect();
            accumulate(adjoint, b, db);
        }
        Op::Mul(a, b) => {
            let out_shape = node.shape();
            if a.needs_grad() {
                let bx = expand_to(b, out_shape);
                accumulate(adjoint, a, bcast_reduce(adj, out_shape, a.shape(), |i| bx(i)));
            }
            if b.needs_grad() {
                let ax = expand_to(a, out_shape);
                accumulate(adjoint, b, bcast_reduce(adj, out_shape, b.shape(), |i| ax(i)));
            }
        }
        Op::Div(a, b) => {
            let out_shape = node.shape();
            if a.needs_grad() {
                let bx = expand_to(b, out_shape);
                accumulate(adjoint, a, bcast_reduce(adj, out_shape, a.shape(), |i| 1.0 / bx(i)));
            }
            if b.needs_grad() {
                let ax = expand_to(a, out_shape);
                let bx = expand_to(b, out_shape);
                accumulate(
                    adjoint,
                    b,
                    bcast_reduce(adj, out_shape, b.shape(), |i| {
                        let bv = bx(i);
                        -ax(i) / (bv * bv)
                    }),
                );
            }
        }
        Op::Neg(a) => accumulate(adjoint, a, adj.iter().map(|x| -x).collect()),
        Op::Exp(a) => {
            let y = node.values();
            accumulate(adjoint, a, adj.iter().zip(y).map(|(d, y)| d * y).collect());
        }
        Op::Scale(a, k) => accumulate(adjoint, a, adj.iter().map(|x| k * x).collect()),
        Op::Softplus(a) => {
            let d: Vec<f64> = adj
                .iter()
                .zip(a.values())
                .map(|(d, &x)| d / (1.0 + (-x).exp()))
                .collect();
            accumulate(adjoint, a, d);
        }
        Op::Gelu(a, phi) => {
            let d: Vec<f64> = adj
                .iter()
                .zip(a.values())
                .zip(phi)
                .map(|((d, &x), p)| d * (p + x * norm_pdf(x)))
                .collect();
            accumulate(adjoint, a, d);
        }
        Op::Reshape(a) => accumulate(adjoint, a, adj.to_vec()),
        Op::Narrow {
            input,
            axis,
            start,
            len,
        } => {
            if input.needs_grad() {
                let extent = input.shape()[*axis];
                let outer: usize = input.shape()[..*axis].iter().product();
                let inner: usize = input.shape()[*axis + 1..].iter().product();
                let mut d = vec![0.0; input.numel()];
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&adj[src..src + len * inner]);
                }
                accumulate(adjoint, input, d);
            }
        }
        Op::Concat(parts, axis) => {
            let shape = node.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[*axis + 1..].iter().product();
            let total = shape[*axis];
            let mut offset = 0usize;
            for p in parts {
                let ext = p.shape()[*axis];
                if p.needs_grad() {
                    let mut d = vec![0.0; p.numel()];
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * ext * inner;
                        d[dst..dst + ext * inner].copy_from_slice(&adj[src..src + ext * inner]);
                    }
                    accumulate(adjoint, p, d);
                }
                offset += ext;
            }
        }
        Op::SumAll(a) => accumulate(adjoint, a, vec![adj[0]; a.numel()]),
        Op::MeanPoolSpatial(a) => {
            let [b, c, h, w] = *a.shape() else { unreachable!() };
            let hw = h * w;
            let inv = 1.0 / hw as f64;
            let mut d = vec![0.0; a.numel()];
            for bc in 0..b * c {
                let g = adj[bc] * inv;
                for i in 0..hw {
                    d[bc * hw + i] = g;
                }
            }
            accumulate(adjoint, a, d);
        }
        Op::Linear { .. } | Op::Conv2d { .. } | Op::GroupNorm { .. } => {
            super::nn::backward_nn(node, op, adj, adjoint);
        }
    }
}

/// Indexer that reads a tensor as if broadcast to `out_shape`.
fn expand_to<'t>(t: &'t DiffTensor, out_shape: &[usize]) -> impl Fn(usize) -> f64 + 't {
    let same = t.shape() == out_shape;
    let rank = out_shape.len();
    let strides = bcast_strides(t.shape(), rank);
    let dims = out_shape.to_vec();
    move |flat: usize| {
        if same {
            return t.values()[flat];
        }
        let mut rem = flat;
        let mut off = 0usize;
        for ax in (0..rank).rev() {
            let coord = rem % dims[ax];
            rem /= dims[ax];
            off += coord * strides[ax];
        }
        t.values()[off]
    }
}

/// Convenience constant builder used by network code: shape-[1] one.
pub fn one() -> DiffTensor {
    DiffTensor::scalar(1.0)
}

#[allow(unused)]
pub(crate) fn assert_same_shape(op: &'static str, a: &DiffTensor, b: &DiffTensor) -> Result<()> {
    if a.shape() != b.shape() {
        for (ax, (l, r)) in a.shape().iter().zip(b.shape()).enumerate() {
            if l != r {
                return Err(TensorError::ShapeMismatch {
                    axis: ax,
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
        }
        return Err(TensorError::RankMismatch {
            want: a.shape().len(),
            shape: b.shape().to_vec(),
        });
    }
    Ok(())
}
