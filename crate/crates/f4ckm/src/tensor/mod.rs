//! Reverse-mode automatic differentiation over dense row-major f64 tensors.
//!
//! A [`DiffTensor`] is an immutable value node. Applying an operation builds a
//! new node that records its inputs, so a forward computation leaves behind a
//! DAG. [`DiffTensor::backward`] walks that DAG once in reverse topological
//! order and accumulates gradients into the leaves that were created with
//! [`DiffTensor::param`]. Nothing is mutated in place; repeated backward calls
//! keep adding into leaf gradients, which is exactly what gradient
//! accumulation over a mini-batch needs.
//!
//! Values are shared through `Arc`, so cloning a tensor or reusing a parameter
//! leaf across many per-sample graphs costs a pointer copy. The graph itself
//! is single-threaded (`Rc`); all numerics are deterministic given identical
//! inputs because every reduction runs in a fixed order.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

mod complex;
mod gradcheck;
mod nn;
mod ops;

pub use complex::ComplexPair;
pub use gradcheck::{grad_check, GradCheckReport, LeafReport};
pub use ops::one;

/// Errors raised by tensor construction and operations.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("value buffer holds {got} elements but shape {shape:?} wants {want}")]
    LengthMismatch {
        shape: Vec<usize>,
        want: usize,
        got: usize,
    },
    #[error("shape mismatch on axis {axis}: left {left:?} vs right {right:?}")]
    ShapeMismatch {
        axis: usize,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("axis {axis} out of range for rank-{rank} tensor")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("narrow [{start}, {start}+{len}) exceeds axis {axis} of extent {extent}")]
    NarrowOutOfRange {
        axis: usize,
        start: usize,
        len: usize,
        extent: usize,
    },
    #[error("reshape from {from:?} ({from_n} elements) to {to:?} ({to_n} elements)")]
    ReshapeMismatch {
        from: Vec<usize>,
        from_n: usize,
        to: Vec<usize>,
        to_n: usize,
    },
    #[error("expected a rank-{want} tensor, got shape {shape:?}")]
    RankMismatch { want: usize, shape: Vec<usize> },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward requires a single-element tensor, got shape {shape:?}")]
    BackwardNonScalar { shape: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Saved context for group normalization backward.
#[derive(Debug)]
pub(crate) struct GnSaved {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

#[derive(Debug)]
pub(crate) enum Op {
    Add(DiffTensor, DiffTensor),
    Sub(DiffTensor, DiffTensor),
    Mul(DiffTensor, DiffTensor),
    Div(DiffTensor, DiffTensor),
    Neg(DiffTensor),
    Exp(DiffTensor),
    Scale(DiffTensor, f64),
    Softplus(DiffTensor),
    /// Caches the standard normal CDF of the input so backward skips erf.
    Gelu(DiffTensor, Vec<f64>),
    Concat(Vec<DiffTensor>, usize),
    Narrow {
        input: DiffTensor,
        axis: usize,
        start: usize,
        len: usize,
    },
    Reshape(DiffTensor),
    SumAll(DiffTensor),
    MeanPoolSpatial(DiffTensor),
    Linear {
        input: DiffTensor,
        weight: DiffTensor,
        bias: DiffTensor,
    },
    Conv2d {
        input: DiffTensor,
        kernel: DiffTensor,
        bias: DiffTensor,
        stride: usize,
        padding: usize,
    },
    GroupNorm {
        input: DiffTensor,
        gamma: DiffTensor,
        beta: DiffTensor,
        groups: usize,
        saved: GnSaved,
    },
}

impl Op {
    fn inputs(&self) -> Vec<&DiffTensor> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![a, b],
            Op::Neg(a)
            | Op::Exp(a)
            | Op::Scale(a, _)
            | Op::Softplus(a)
            | Op::Gelu(a, _)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::MeanPoolSpatial(a) => vec![a],
            Op::Concat(parts, _) => parts.iter().collect(),
            Op::Narrow { input, .. } => vec![input],
            Op::Linear {
                input,
                weight,
                bias,
            } => vec![input, weight, bias],
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => vec![input, kernel, bias],
            Op::GroupNorm {
                input, gamma, beta, ..
            } => vec![input, gamma, beta],
        }
    }
}

#[derive(Debug)]
struct Inner {
    id: u64,
    shape: Vec<usize>,
    values: Arc<Vec<f64>>,
    /// True when this tensor is a parameter leaf or depends on one.
    needs_grad: bool,
    /// Lazily allocated; only parameter leaves ever hold a gradient.
    grad: RefCell<Option<Vec<f64>>>,
    op: Option<Op>,
}

/// Dense row-major tensor participating in reverse-mode differentiation.
#[derive(Clone, Debug)]
pub struct DiffTensor {
    inner: Rc<Inner>,
}

pub(crate) fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let want: usize = shape.iter().product();
    if want != len {
        return Err(TensorError::LengthMismatch {
            shape: shape.to_vec(),
            want,
            got: len,
        });
    }
    Ok(())
}

impl DiffTensor {
    /// Leaf that accumulates gradients (a trainable parameter).
    pub fn param(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        check_len(shape, values.len())?;
        Ok(Self::raw(shape.to_vec(), Arc::new(values), true, None))
    }

    /// Leaf that never receives gradients (inputs, cached constants).
    pub fn constant(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        check_len(shape, values.len())?;
        Ok(Self::raw(shape.to_vec(), Arc::new(values), false, None))
    }

    /// Constant leaf over shared storage; cloning the `Arc` avoids a copy.
    pub fn constant_shared(shape: &[usize], values: Arc<Vec<f64>>) -> Result<Self> {
        check_len(shape, values.len())?;
        Ok(Self::raw(shape.to_vec(), values, false, None))
    }

    /// Parameter leaf over shared storage.
    pub fn param_shared(shape: &[usize], values: Arc<Vec<f64>>) -> Result<Self> {
        check_len(shape, values.len())?;
        Ok(Self::raw(shape.to_vec(), values, true, None))
    }

    /// Single-element constant.
    pub fn scalar(v: f64) -> Self {
        Self::raw(vec![1], Arc::new(vec![v]), false, None)
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n: usize = shape.iter().product();
        Self::raw(shape.to_vec(), Arc::new(vec![v; n]), false, None)
    }

    fn raw(shape: Vec<usize>, values: Arc<Vec<f64>>, needs_grad: bool, op: Option<Op>) -> Self {
        DiffTensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                values,
                needs_grad,
                grad: RefCell::new(None),
                op,
            }),
        }
    }

    pub(crate) fn from_op(shape: Vec<usize>, values: Vec<f64>, op: Op) -> Self {
        let needs_grad = op.inputs().iter().any(|t| t.inner.needs_grad);
        Self::raw(shape, Arc::new(values), needs_grad, Some(op))
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn values(&self) -> &[f64] {
        &self.inner.values
    }

    pub fn values_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.inner.values)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.op.is_none()
    }

    pub fn needs_grad(&self) -> bool {
        self.inner.needs_grad
    }

    /// Accumulated gradient of a parameter leaf, if any backward has reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Reverse-mode sweep from a single-element output.
    ///
    /// Visits each reachable node exactly once, in reverse topological order,
    /// and adds the resulting adjoints into the gradients of parameter
    /// leaves. Non-leaf adjoints are scratch state local to this call.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::BackwardNonScalar {
                shape: self.inner.shape.clone(),
            });
        }
        if !self.inner.needs_grad {
            return Ok(());
        }

        let order = self.topo_order();
        let mut adjoint: HashMap<u64, Vec<f64>> = HashMap::new();
        adjoint.insert(self.inner.id, vec![1.0]);

        for node in order.iter().rev() {
            let Some(adj) = adjoint.remove(&node.inner.id) else {
                continue;
            };
            match &node.inner.op {
                None => {
                    if node.inner.needs_grad {
                        let mut slot = node.inner.grad.borrow_mut();
                        match slot.as_mut() {
                            Some(g) => {
                                for (gi, ai) in g.iter_mut().zip(&adj) {
                                    *gi += ai;
                                }
                            }
                            None => *slot = Some(adj),
                        }
                    }
                }
                Some(op) => ops::backward_op(node, op, &adj, &mut adjoint),
            }
        }
        Ok(())
    }

    /// Post-order DFS restricted to subgraphs that can reach a parameter.
    fn topo_order(&self) -> Vec<DiffTensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        // Stack of (node, children_pushed).
        let mut stack: Vec<(DiffTensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.inner.id) || !node.inner.needs_grad {
                continue;
            }
            let children: Vec<DiffTensor> = match &node.inner.op {
                Some(op) => op.inputs().into_iter().cloned().collect(),
                None => Vec::new(),
            };
            stack.push((node, true));
            for child in children {
                if child.inner.needs_grad && !visited.contains(&child.inner.id) {
                    stack.push((child, false));
                }
            }
        }
        order
    }
}

pub(crate) fn accumulate(adjoint: &mut HashMap<u64, Vec<f64>>, target: &DiffTensor, contrib: Vec<f64>) {
    if !target.inner.needs_grad {
        return;
    }
    match adjoint.entry(target.inner.id) {
        std::collections::hash_map::Entry::Occupied(mut e) => {
            let slot = e.get_mut();
            for (s, c) in slot.iter_mut().zip(&contrib) {
                *s += c;
            }
        }
        std::collections::hash_map::Entry::Vacant(e) => {
            e.insert(contrib);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_rejects_wrong_length() {
        let err = DiffTensor::param(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::LengthMismatch { want: 6, got: 5, .. }));
    }

    #[test]
    fn leaves_have_no_op_and_lazy_grad() {
        let p = DiffTensor::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(p.is_leaf());
        assert!(p.grad().is_none());
    }

    #[test]
    fn backward_twice_doubles_leaf_grads() {
        let p = DiffTensor::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let loss = p.mul(&p).unwrap().sum_all();
        loss.backward().unwrap();
        let g1 = p.grad().unwrap();
        loss.backward().unwrap();
        let g2 = p.grad().unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(*b, 2.0 * *a);
        }
    }

    #[test]
    fn backward_requires_scalar_output() {
        let p = DiffTensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = p.mul(&p).unwrap();
        assert!(matches!(
            y.backward(),
            Err(TensorError::BackwardNonScalar { .. })
        ));
    }

    #[test]
    fn constants_receive_no_grad() {
        let c = DiffTensor::constant(&[2], vec![3.0, 4.0]).unwrap();
        let p = DiffTensor::param(&[2], vec![1.0, 1.0]).unwrap();
        let loss = c.mul(&p).unwrap().sum_all();
        loss.backward().unwrap();
        assert!(c.grad().is_none());
        assert_eq!(p.grad().unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn diamond_graph_visits_node_once() {
        // loss = (p + p) . (p + p) touches the shared sum twice; the chain
        // rule still gives d/dp sum((2p)^2) = 8p.
        let p = DiffTensor::param(&[2], vec![1.5, -0.5]).unwrap();
        let s = p.add(&p).unwrap();
        let loss = s.mul(&s).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![12.0, -4.0]);
    }
}
