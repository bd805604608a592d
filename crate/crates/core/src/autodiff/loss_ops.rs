use super::{Op, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

pub const BCE_CLAMP: f64 = 1e-7;

fn rows<T: Scalar>(t: &Tensor<T>) -> usize {
    let s = t.shape();
    if s.len() <= 1 {
        1
    } else {
        s[..s.len() - 1].iter().product()
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub(super) fn elastic_net_backward<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &Tensor<T>, g0: T) -> Vec<T> {
    let scale = g0 / T::c(rows(pred) as f64);
    let two = T::c(2.0);
    pred.data()
        .iter()
        .zip(gt.data())
        .zip(mask.data())
        .map(|((&p, &t), &m)| {
            let r = m * (p - t);
            scale * m * (sign(r) + two * r)
        })
        .collect()
}

pub(super) fn clamp_bounds<T: Scalar>() -> (T, T) {
    (T::c(BCE_CLAMP), T::one() - T::c(BCE_CLAMP))
}

pub(super) fn bce_backward<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, g0: T) -> Vec<T> {
    let scale = g0 / T::c(rows(pred) as f64);
    let (lo, hi) = clamp_bounds::<T>();
    pred.data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &c)| {
            if p < lo || p > hi {
                T::zero()
            } else {
                scale * ((T::one() - c) / (T::one() - p) - c / p)
            }
        })
        .collect()
}

impl<T: Scalar> Tape<T> {
    /// L1 + squared L2 penalty on masked residuals, summed over the last
    /// axis and averaged over all leading (batch, joint) positions.
    ///
    /// The subgradient of the L1 term at a zero residual is 0.
    pub fn elastic_net(&mut self, pred: Var, gt: &Tensor<T>, mask: &Tensor<T>) -> Result<Var> {
        self.check(pred)?;
        let ps = self.shape(pred);
        if ps != gt.shape() || ps != mask.shape() {
            return Err(shape_err(
                "elastic_net_loss",
                format!("pred {:?}, gt {:?}, mask {:?}", ps, gt.shape(), mask.shape()),
            ));
        }
        let pv = self.value(pred);
        let mut total = T::zero();
        for ((&p, &t), &m) in pv.data().iter().zip(gt.data()).zip(mask.data()) {
            let r = m * (p - t);
            total = total + r.abs() + r * r;
        }
        let loss = total / T::c(rows(pv) as f64);
        Ok(self.push(Tensor::scalar(loss), Op::ElasticNet { pred, gt: gt.clone(), mask: mask.clone() }))
    }

    /// Binary cross entropy of predictions clamped to `[1e-7, 1 − 1e-7]`,
    /// averaged over all entries. Clamped entries receive no gradient.
    pub fn bce(&mut self, pred: Var, gt: &Tensor<T>) -> Result<Var> {
        self.check(pred)?;
        if self.shape(pred) != gt.shape() {
            return Err(shape_err("bce_loss", format!("pred {:?}, gt {:?}", self.shape(pred), gt.shape())));
        }
        let (lo, hi) = clamp_bounds::<T>();
        let pv = self.value(pred);
        let mut total = T::zero();
        for (&p, &c) in pv.data().iter().zip(gt.data()) {
            let q = p.max(lo).min(hi);
            total = total + (c - T::one()) * (T::one() - q).ln() - c * q.ln();
        }
        let loss = total / T::c(rows(pv) as f64);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { pred, gt: gt.clone() }))
    }
}
