use std::sync::Arc;

use super::{Activation, Op, Tape, Var};
use crate::error::{arg_err, shape_err, Result};
use crate::par;
use crate::tensor::{Scalar, Tensor};

/// Softmax over the `H × W` plane of every (batch, channel) pair, in place.
pub(crate) fn spatial_softmax_in_place<T: Scalar>(data: &mut [T], b: usize, hw: usize, c: usize) {
    par::for_each_chunk_mut(&mut data[..b * hw * c], hw * c, |_, img| {
        let mut mx = vec![T::neg_infinity(); c];
        for row in img.chunks_exact(c) {
            for ch in 0..c {
                mx[ch] = mx[ch].max(row[ch]);
            }
        }
        let mut sum = vec![T::zero(); c];
        for row in img.chunks_exact_mut(c) {
            for ch in 0..c {
                let e = (row[ch] - mx[ch]).exp();
                row[ch] = e;
                sum[ch] = sum[ch] + e;
            }
        }
        for row in img.chunks_exact_mut(c) {
            for ch in 0..c {
                row[ch] = row[ch] / sum[ch];
            }
        }
    });
}

pub(super) fn spatial_softmax_backward<T: Scalar>(y: &Tensor<T>, g: &[T]) -> Vec<T> {
    let (_, h, w, c) = y.dims4().expect("rank 4");
    let hw = h * w;
    let yd = y.data();
    let mut dx = vec![T::zero(); yd.len()];
    par::for_each_chunk_mut(&mut dx, hw * c, |bi, img| {
        let base = bi * hw * c;
        let mut dot = vec![T::zero(); c];
        for p in 0..hw {
            for ch in 0..c {
                let i = base + p * c + ch;
                dot[ch] = dot[ch] + yd[i] * g[i];
            }
        }
        for p in 0..hw {
            for ch in 0..c {
                let i = base + p * c + ch;
                img[p * c + ch] = yd[i] * (g[i] - dot[ch]);
            }
        }
    });
    dx
}

pub(super) fn plane_dot_backward<T: Scalar>(x: &Tensor<T>, weights: &[T], g: &[T]) -> Vec<T> {
    let (_, h, w, c) = x.dims4().expect("rank 4");
    let hw = h * w;
    let mut dx = vec![T::zero(); x.len()];
    for (bi, img) in dx.chunks_exact_mut(hw * c).enumerate() {
        for p in 0..hw {
            for ch in 0..c {
                img[p * c + ch] = weights[p] * g[bi * c + ch];
            }
        }
    }
    dx
}

impl<T: Scalar> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.check(x)?;
        let f = T::c(factor);
        let value = self.value(x).map(|v| v * f);
        Ok(self.push(value, Op::Scale { x, factor: f }))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum { x }))
    }

    /// Unweighted mean of scalar variables.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs.split_first().ok_or_else(|| arg_err("mean_of", "no inputs"))?;
        let mut acc = first;
        for &x in rest {
            acc = self.add(acc, x)?;
        }
        self.scale(acc, 1.0 / xs.len() as f64)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        Ok(self.push(value, Op::Relu { x }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        Ok(self.push(value, Op::Sigmoid { x }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Sigmoid => self.sigmoid(x),
        }
    }

    /// Concatenates along the last axis. Leading extents must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, _) = parts.split_first().ok_or_else(|| arg_err("concat_last", "no inputs"))?;
        self.check(first)?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            self.check(p)?;
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(shape_err("concat_last", format!("{s:?} incompatible with leading {lead:?}")));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat { parts: parts.iter().copied().zip(widths).collect() }))
    }

    /// Softmax over the spatial plane of each (batch, channel) of a
    /// `B × H × W × N` tensor, stabilized by subtracting the plane maximum.
    pub fn spatial_softmax(&mut self, h: Var) -> Result<Var> {
        self.check(h)?;
        let (b, hh, w, c) = self.value(h).dims4()?;
        let mut data = self.value(h).data().to_vec();
        spatial_softmax_in_place(&mut data, b, hh * w, c);
        let value = Tensor::new([b, hh, w, c], data)?;
        Ok(self.push(value, Op::SpatialSoftmax { x: h }))
    }

    /// Contracts each `H × W` plane of `x` with a fixed weight plane,
    /// yielding `B × N`.
    pub fn plane_dot(&mut self, x: Var, weights: Arc<Vec<T>>) -> Result<Var> {
        self.check(x)?;
        let (b, h, w, c) = self.value(x).dims4()?;
        if weights.len() != h * w {
            return Err(shape_err("plane_dot", format!("{} weights for a {h}×{w} plane", weights.len())));
        }
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); b * c];
        for bi in 0..b {
            for p in 0..h * w {
                for ch in 0..c {
                    out[bi * c + ch] = out[bi * c + ch] + weights[p] * xd[(bi * h * w + p) * c + ch];
                }
            }
        }
        let value = Tensor::new([b, c], out)?;
        Ok(self.push(value, Op::PlaneDot { x, weights }))
    }
}
