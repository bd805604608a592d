//! Linear gradient tape with explicit per-operation backward rules.
//!
//! Every differentiable operation is a method on [`Tape`] that evaluates the
//! forward value eagerly, records the node, and returns a [`Var`] handle.
//! [`Tape::backward`] replays the record in reverse execution order.

mod basic;
mod conv;
mod gradcheck;
mod heads_ops;
mod loss_ops;
mod norm;
mod pool;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

pub use conv::{conv_out_extent, Padding};
pub use gradcheck::{finite_diff_check, finite_diff_check_at, relative_error};
pub use norm::{BatchStats, NormMode};
pub use pool::PoolKind;

use crate::error::{Error, Result};
use crate::heads::Ramps;
use crate::tensor::{Scalar, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    tape: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Elementwise activation selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
    pub stride: usize,
    pub co: usize,
    pub ho: usize,
    pub wo: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub window: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    Depthwise { x: Var, w: Var, geom: ConvGeom },
    MaxPool { x: Var, argmax: Vec<usize>, geom: PoolGeom },
    SumPool { x: Var, geom: PoolGeom },
    Upsample2x { x: Var },
    Norm { x: Var, scale: Var, shift: Var, xhat: Vec<T>, inv_std: Vec<T>, batch: bool },
    Relu { x: Var },
    Sigmoid { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Sum { x: Var },
    Concat { parts: Vec<(Var, usize)> },
    SpatialSoftmax { x: Var },
    PlaneDot { x: Var, weights: Arc<Vec<T>> },
    SoftArgmax { h: Var, ramps: Arc<Ramps<T>> },
    DepthAttention { h: Var, d: Var },
    Confidence { p: Var, windows: Vec<usize> },
    ElasticNet { pred: Var, gt: Tensor<T>, mask: Tensor<T> },
    Bce { pred: Var, gt: Tensor<T> },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
}

/// Ordered record of executed operations.
pub struct Tape<T> {
    id: u32,
    nodes: Vec<Node<T>>,
    macs: u64,
    ramps: HashMap<(usize, usize), Arc<Ramps<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient buffers produced by [`Tape::backward`], keyed by variable.
pub struct Gradients<T> {
    tape: u32,
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` as a tensor; zeros when unreachable.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.index].clone();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            macs: 0,
            ramps: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulate operations executed by convolutions so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub(crate) fn add_macs(&mut self, n: u64) {
        self.macs += n;
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar(v.index));
        }
        Ok(())
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { value, op });
        Var { index, tape: self.id }
    }

    pub(crate) fn ramps(&mut self, h: usize, w: usize) -> Result<Arc<Ramps<T>>> {
        if let Some(r) = self.ramps.get(&(h, w)) {
            return Ok(r.clone());
        }
        let r = Arc::new(Ramps::new(h, w)?);
        self.ramps.insert((h, w), r.clone());
        Ok(r)
    }

    /// Hash of every branch taken by non-smooth operations: ReLU signs,
    /// max-pool winners, confidence windows, L1 residual signs and BCE
    /// clamping. Two evaluations with equal signatures lie on the same
    /// smooth piece of the loss.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let (lo, hi) = loss_ops::clamp_bounds::<T>();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu { x } => {
                    i.hash(&mut h);
                    for v in self.nodes[x.index].value.data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => (i, argmax).hash(&mut h),
                Op::Confidence { windows, .. } => (i, windows).hash(&mut h),
                Op::ElasticNet { pred, gt, mask } => {
                    i.hash(&mut h);
                    let p = self.nodes[pred.index].value.data();
                    for ((pv, gv), m) in p.iter().zip(gt.data()).zip(mask.data()) {
                        (*m != T::zero() && pv > gv).hash(&mut h);
                    }
                }
                Op::Bce { pred, .. } => {
                    i.hash(&mut h);
                    for v in self.nodes[pred.index].value.data() {
                        ((*v < lo) as u8 + 2 * (*v > hi) as u8).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.index] = Some(vec![T::one()]);
        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { tape: self.id, grads, shapes })
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, geom } => {
                let (dx, dw) = conv::conv2d_backward(self.value(*x), self.value(*w), g, geom);
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
            }
            Op::Depthwise { x, w, geom } => {
                let (dx, dw) = conv::depthwise_backward(self.value(*x), self.value(*w), g, geom);
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
            }
            Op::MaxPool { x, argmax, geom } => {
                accumulate(grads, *x, pool::max_pool_backward(argmax, g, geom));
            }
            Op::SumPool { x, geom } => {
                accumulate(grads, *x, pool::sum_pool_backward(g, geom));
            }
            Op::Upsample2x { x } => {
                let dx = pool::upsample2x_backward(self.value(*x).shape(), g);
                accumulate(grads, *x, dx);
            }
            Op::Norm { x, scale, shift, xhat, inv_std, batch } => {
                let gamma = self.value(*scale).data();
                let (dx, dscale, dshift) = norm::backward(xhat, inv_std, gamma, g, *batch);
                accumulate(grads, *x, dx);
                accumulate(grads, *scale, dscale);
                accumulate(grads, *shift, dshift);
            }
            Op::Relu { x } => {
                let dx = out.data().iter().zip(g).map(|(&y, &gy)| if y > T::zero() { gy } else { T::zero() });
                accumulate(grads, *x, dx.collect());
            }
            Op::Sigmoid { x } => {
                let dx = out.data().iter().zip(g).map(|(&y, &gy)| gy * y * (T::one() - y));
                accumulate(grads, *x, dx.collect());
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, g.to_vec());
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                accumulate(grads, *a, g.iter().zip(bv).map(|(&gy, &y)| gy * y).collect());
                accumulate(grads, *b, g.iter().zip(av).map(|(&gy, &y)| gy * y).collect());
            }
            Op::Scale { x, factor } => {
                accumulate(grads, *x, g.iter().map(|&gy| gy * *factor).collect());
            }
            Op::Sum { x } => {
                accumulate(grads, *x, vec![g[0]; self.value(*x).len()]);
            }
            Op::Concat { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(v, width) in parts {
                    let rows = g.len() / total;
                    let mut dv = Vec::with_capacity(rows * width);
                    for r in 0..rows {
                        dv.extend_from_slice(&g[r * total + offset..r * total + offset + width]);
                    }
                    accumulate(grads, v, dv);
                    offset += width;
                }
            }
            Op::SpatialSoftmax { x } => {
                accumulate(grads, *x, basic::spatial_softmax_backward(out, g));
            }
            Op::PlaneDot { x, weights } => {
                accumulate(grads, *x, basic::plane_dot_backward(self.value(*x), weights, g));
            }
            Op::SoftArgmax { h, ramps } => {
                accumulate(grads, *h, heads_ops::soft_argmax_backward(self.value(*h), ramps, g));
            }
            Op::DepthAttention { h, d } => {
                let (dh, dd) = heads_ops::depth_attention_backward(self.value(*h), self.value(*d), out, g);
                accumulate(grads, *h, dh);
                accumulate(grads, *d, dd);
            }
            Op::Confidence { p, windows } => {
                accumulate(grads, *p, heads_ops::confidence_backward(self.value(*p), windows, g));
            }
            Op::ElasticNet { pred, gt, mask } => {
                let dp = loss_ops::elastic_net_backward(self.value(*pred), gt, mask, g[0]);
                accumulate(grads, *pred, dp);
            }
            Op::Bce { pred, gt } => {
                accumulate(grads, *pred, loss_ops::bce_backward(self.value(*pred), gt, g[0]));
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
    match &mut grads[v.index] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e = *e + c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signature_tracks_relu_branches() {
        let sig = |v: [f64; 3]| {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(Tensor::from_f64([3], &v).unwrap());
            let y = tape.relu(x).unwrap();
            tape.sum(y).unwrap();
            tape.branch_signature()
        };
        assert_eq!(sig([1.0, -2.0, 3.0]), sig([1.5, -0.1, 9.0]));
        assert_ne!(sig([1.0, -2.0, 3.0]), sig([1.0, 0.1, 3.0]));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap());
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([3], &[1.0, 2.0, 3.0]).unwrap());
        let xx = tape.mul(x, x).unwrap();
        let s = tape.sum(xx).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn unreachable_leaf_has_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
        let y = tape.leaf(Tensor::from_f64([2], &[3.0, 4.0]).unwrap());
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(y).is_none());
        assert_eq!(g.tensor(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn foreign_loss_rejected() {
        let mut a = Tape::<f64>::new();
        let mut b = Tape::<f64>::new();
        let x = a.leaf(Tensor::scalar(1.0));
        let _ = b.leaf(Tensor::scalar(1.0));
        assert!(matches!(b.backward(x), Err(Error::ForeignVar(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn backward_does_not_mutate_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([3], &[1.0, -2.0, 3.0]).unwrap());
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        let before = tape.value(r).clone();
        let _ = tape.backward(s).unwrap();
        let _ = tape.backward(s).unwrap();
        assert_eq!(tape.value(r), &before);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(x) + sum(2x) -> gradient 3
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
        let a = tape.sum(x).unwrap();
        let x2 = tape.scale(x, 2.0).unwrap();
        let b = tape.sum(x2).unwrap();
        let l = tape.add(a, b).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &[3.0, 3.0]);
    }
}
