//! Parameter-free regression heads: soft-argmax for image coordinates,
//! heatmap-guided attention over depth maps, and the 2×2 window
//! confidence score.
//!
//! The functions here work on single `H × W` planes stored row-major. The
//! differentiable, batched versions live on [`crate::autodiff::Tape`]
//! (`soft_argmax`, `depth_attention`, `confidence_score`,
//! `assemble_predictions`) and are built on these.

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Normalized coordinate ramps for one heatmap resolution.
///
/// Column `j` (0-based) holds `(2j + 1) / (2W)`, the center of pixel `j` in
/// normalized image coordinates; rows likewise with `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ramps<T> {
    pub height: usize,
    pub width: usize,
    pub wx: Vec<T>,
    pub wy: Vec<T>,
}

impl<T: Scalar> Ramps<T> {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(arg_err("make_ramps", format!("zero extent {height}×{width}")));
        }
        let two_w = T::c((2 * width) as f64);
        let two_h = T::c((2 * height) as f64);
        let mut wx = Vec::with_capacity(height * width);
        let mut wy = Vec::with_capacity(height * width);
        for i in 0..height {
            let y = T::c((2 * i + 1) as f64) / two_h;
            for j in 0..width {
                wx.push(T::c((2 * j + 1) as f64) / two_w);
                wy.push(y);
            }
        }
        Ok(Self { height, width, wx, wy })
    }

    pub fn len(&self) -> usize {
        self.wx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wx.is_empty()
    }
}

/// Same as [`Ramps::new`].
pub fn make_ramps<T: Scalar>(height: usize, width: usize) -> Result<Ramps<T>> {
    Ramps::new(height, width)
}

/// One joint's regressed outputs, all in normalized units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointPrediction<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub confidence: T,
}

/// Spatial softmax of one plane, stabilized by the plane maximum.
pub fn softmax_plane<T: Scalar>(h: &[T]) -> Vec<T> {
    let mx = h.iter().copied().fold(T::neg_infinity(), T::max);
    let mut e: Vec<T> = h.iter().map(|&v| (v - mx).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.iter_mut().for_each(|v| *v = *v / s);
    e
}

/// Expected normalized `(x, y)` under the softmax of `h`.
pub fn soft_argmax_plane<T: Scalar>(h: &[T], ramps: &Ramps<T>) -> (T, T) {
    assert_eq!(h.len(), ramps.len(), "heatmap/ramp size mismatch");
    let phi = softmax_plane(h);
    expectation(&phi, ramps)
}

fn expectation<T: Scalar>(phi: &[T], ramps: &Ramps<T>) -> (T, T) {
    let mut x = T::zero();
    let mut y = T::zero();
    for ((&p, &wx), &wy) in phi.iter().zip(&ramps.wx).zip(&ramps.wy) {
        x = x + wx * p;
        y = y + wy * p;
    }
    (x, y)
}

/// Gradient of `gx·Ψx(h) + gy·Ψy(h)` with respect to every `h[i,j]`.
///
/// Evaluates the closed form
/// `W[i,j]·Φ[i,j]·(1 − Φ[i,j]) − Σ_{(l,c) ≠ (i,j)} W[l,c]·Φ[i,j]·Φ[l,c]`
/// per component and contracts it with the upstream gradient.
pub fn soft_argmax_backward_plane<T: Scalar>(h: &[T], ramps: &Ramps<T>, gx: T, gy: T) -> Vec<T> {
    assert_eq!(h.len(), ramps.len(), "heatmap/ramp size mismatch");
    let phi = softmax_plane(h);
    let (psi_x, psi_y) = expectation(&phi, ramps);
    phi.iter()
        .zip(&ramps.wx)
        .zip(&ramps.wy)
        .map(|((&p, &wx), &wy)| {
            // cross sum over all other cells = Ψ − W[i,j]·Φ[i,j]
            let dx = wx * p * (T::one() - p) - p * (psi_x - wx * p);
            let dy = wy * p * (T::one() - p) - p * (psi_y - wy * p);
            gx * dx + gy * dy
        })
        .collect()
}

/// `Σ d·e^h / Σ e^h`, computed with max subtraction.
pub fn depth_attention_plane<T: Scalar>(h: &[T], d: &[T]) -> T {
    assert_eq!(h.len(), d.len(), "heatmap/depth size mismatch");
    let mx = h.iter().copied().fold(T::neg_infinity(), T::max);
    let mut num = T::zero();
    let mut den = T::zero();
    for (&hv, &dv) in h.iter().zip(d) {
        let e = (hv - mx).exp();
        num = num + dv * e;
        den = den + e;
    }
    num / den
}

/// Maximum 2×2 stride-1 window sum of a normalized plane, and the row-major
/// index of that window's top-left cell (first maximum wins).
pub fn confidence_plane<T: Scalar>(phi: &[T], height: usize, width: usize) -> Result<(T, usize)> {
    if height < 2 || width < 2 {
        return Err(arg_err("confidence_score", format!("plane {height}×{width} smaller than 2×2")));
    }
    if phi.len() != height * width {
        return Err(shape_err("confidence_score", format!("{} values for {height}×{width}", phi.len())));
    }
    let mut best = T::neg_infinity();
    let mut best_i = 0;
    for i in 0..height - 1 {
        for j in 0..width - 1 {
            let t = i * width + j;
            let s = phi[t] + phi[t + 1] + phi[t + width] + phi[t + width + 1];
            if s > best {
                best = s;
                best_i = t;
            }
        }
    }
    Ok((best, best_i))
}

/// Normalized coordinates of the center of the highest cell.
pub fn argmax_plane<T: Scalar>(h: &[T], height: usize, width: usize) -> (T, T) {
    let mut best = 0;
    for (i, &v) in h.iter().enumerate() {
        if v > h[best] {
            best = i;
        }
    }
    let (i, j) = (best / width, best % width);
    (
        T::c((2 * j + 1) as f64) / T::c((2 * width) as f64),
        T::c((2 * i + 1) as f64) / T::c((2 * height) as f64),
    )
}

/// Per-joint predictions from `B × H × W × N` heatmaps and depth maps,
/// evaluated without recording gradients.
pub fn assemble_predictions<T: Scalar>(h: &Tensor<T>, d: &Tensor<T>) -> Result<Vec<Vec<JointPrediction<T>>>> {
    let (b, hh, w, n) = h.dims4()?;
    let (bd, hd, wd, nd) = d.dims4()?;
    if n != nd {
        return Err(shape_err("assemble_predictions", format!("{n} heatmaps but {nd} depth maps")));
    }
    if (b, hh, w) != (bd, hd, wd) {
        return Err(shape_err("assemble_predictions", format!("{:?} vs {:?}", h.shape(), d.shape())));
    }
    let ramps = Ramps::new(hh, w)?;
    (0..b)
        .map(|bi| {
            (0..n)
                .map(|j| {
                    let hp = h.plane(bi, j);
                    let dp = d.plane(bi, j);
                    let (x, y) = soft_argmax_plane(&hp, &ramps);
                    let z = depth_attention_plane(&hp, &dp);
                    let (confidence, _) = confidence_plane(&softmax_plane(&hp), hh, w)?;
                    Ok(JointPrediction { x, y, z, confidence })
                })
                .collect()
        })
        .collect()
}
