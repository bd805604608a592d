//! Dense, depthwise and separable convolutions (NHWC, HWIO weights).

use super::{ConvGeom, Op, Tape, Var};
use crate::error::{arg_err, shape_err, Result};
use crate::par;
use crate::tensor::{gemm, Scalar, Tensor};

/// Spatial padding convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output extent `ceil(n / stride)`, padding split with the extra cell
    /// at the bottom/right.
    Same,
    /// No padding; output extent `(n - k) / stride + 1`.
    Valid,
}

/// Output extent and leading padding for one spatial axis.
pub fn conv_out_extent(n: usize, k: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    if stride == 0 || k == 0 {
        return None;
    }
    match padding {
        Padding::Same => {
            let out = n.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(n);
            Some((out, total / 2))
        }
        Padding::Valid => (n >= k).then(|| ((n - k) / stride + 1, 0)),
    }
}

// Rows per block for blocked GEMMs; fixed so results do not depend on the
// number of workers.
const ROW_BLOCK: usize = 1024;

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let kkc = g.k * g.k * g.c;
    let mut col = vec![T::zero(); g.b * g.ho * g.wo * kkc];
    par::for_each_chunk_mut(&mut col, g.wo * kkc, |row, chunk| {
        let b = row / g.ho;
        let oy = row % g.ho;
        for ox in 0..g.wo {
            let dst = &mut chunk[ox * kkc..(ox + 1) * kkc];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let src = ((b * g.h + iy as usize) * g.w + ix as usize) * g.c;
                    let o = (ky * g.k + kx) * g.c;
                    dst[o..o + g.c].copy_from_slice(&x[src..src + g.c]);
                }
            }
        }
    });
    col
}

fn col2im<T: Scalar>(dcol: &[T], g: &ConvGeom) -> Vec<T> {
    let kkc = g.k * g.k * g.c;
    let image = g.h * g.w * g.c;
    let mut dx = vec![T::zero(); g.b * image];
    par::for_each_chunk_mut(&mut dx, image, |b, img| {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let src = &dcol[((b * g.ho + oy) * g.wo + ox) * kkc..][..kkc];
                for ky in 0..g.k {
                    let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.k {
                        let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let d = (iy as usize * g.w + ix as usize) * g.c;
                        let s = (ky * g.k + kx) * g.c;
                        for c in 0..g.c {
                            img[d + c] = img[d + c] + src[s + c];
                        }
                    }
                }
            }
        }
    });
    dx
}

/// `out[rows × n] = a[rows × k] · b[k × n]`, blocked over rows.
fn gemm_rows<T: Scalar>(rows: usize, k: usize, n: usize, a: &[T], b: &[T], b_trans: bool) -> Vec<T> {
    let mut out = vec![T::zero(); rows * n];
    par::for_each_chunk_mut(&mut out, ROW_BLOCK * n, |blk, chunk| {
        let r0 = blk * ROW_BLOCK;
        let m = chunk.len() / n;
        gemm(m, k, n, &a[r0 * k..(r0 + m) * k], false, b, b_trans, chunk, false);
    });
    out
}

/// `a[rows × m]^T · b[rows × n]`, reduced over fixed row blocks in order.
fn gemm_at_b<T: Scalar>(rows: usize, m: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    let blocks = rows.div_ceil(ROW_BLOCK);
    let partials = par::map_collect(blocks, |blk| {
        let r0 = blk * ROW_BLOCK;
        let r1 = (r0 + ROW_BLOCK).min(rows);
        let mut p = vec![T::zero(); m * n];
        gemm(m, r1 - r0, n, &a[r0 * m..r1 * m], true, &b[r0 * n..r1 * n], false, &mut p, false);
        p
    });
    let mut out = vec![T::zero(); m * n];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o = *o + v;
        }
    }
    out
}

fn geometry(
    op: &'static str,
    xs: &[usize],
    k: usize,
    stride: usize,
    co: usize,
    padding: Padding,
) -> Result<ConvGeom> {
    let [b, h, w, c] = xs[..] else {
        return Err(shape_err(op, format!("input must be B×H×W×C, got {xs:?}")));
    };
    let (ho, pad_top) = conv_out_extent(h, k, stride, padding)
        .ok_or_else(|| arg_err(op, format!("kernel {k}/stride {stride} invalid for height {h}")))?;
    let (wo, pad_left) = conv_out_extent(w, k, stride, padding)
        .ok_or_else(|| arg_err(op, format!("kernel {k}/stride {stride} invalid for width {w}")))?;
    Ok(ConvGeom { b, h, w, c, k, stride, co, ho, wo, pad_top, pad_left })
}

pub(super) fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let rows = g.b * g.ho * g.wo;
    let kkc = g.k * g.k * g.c;
    if g.k == 1 && g.stride == 1 {
        gemm_rows(rows, kkc, g.co, x, w, false)
    } else {
        let col = im2col(x, g);
        gemm_rows(rows, kkc, g.co, &col, w, false)
    }
}

pub(super) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &[T],
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>) {
    let rows = g.b * g.ho * g.wo;
    let kkc = g.k * g.k * g.c;
    let pointwise = g.k == 1 && g.stride == 1;
    let col_owned;
    let col: &[T] = if pointwise {
        x.data()
    } else {
        col_owned = im2col(x.data(), g);
        &col_owned
    };
    let dw = gemm_at_b(rows, kkc, g.co, col, dy);
    // dcol = dy · w^T ; w stored kkc × co
    let dcol = gemm_rows(rows, g.co, kkc, dy, w.data(), true);
    let dx = if pointwise { dcol } else { col2im(&dcol, g) };
    (dx, dw)
}

pub(super) fn depthwise_forward<T: Scalar>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::zero(); g.b * g.ho * g.wo * g.c];
    par::for_each_chunk_mut(&mut out, g.wo * g.c, |row, orow| {
        let b = row / g.ho;
        let oy = row % g.ho;
        for ky in 0..g.k {
            let iy = (oy + ky) as isize - g.pad_top as isize;
            if iy < 0 || iy >= g.h as isize {
                continue;
            }
            for kx in 0..g.k {
                let wk = &w[(ky * g.k + kx) * g.c..][..g.c];
                for ox in 0..g.wo {
                    let ix = (ox + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let src = &x[((b * g.h + iy as usize) * g.w + ix as usize) * g.c..][..g.c];
                    let dst = &mut orow[ox * g.c..(ox + 1) * g.c];
                    for c in 0..g.c {
                        dst[c] = dst[c] + src[c] * wk[c];
                    }
                }
            }
        }
    });
    out
}

pub(super) fn depthwise_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &[T],
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>) {
    let (x, w) = (x.data(), w.data());
    let mut dx = vec![T::zero(); g.b * g.h * g.w * g.c];
    // dx[iy, ix] = sum_k dy[iy - ky + pt, ix - kx + pl] * w[ky, kx]
    par::for_each_chunk_mut(&mut dx, g.w * g.c, |row, drow| {
        let b = row / g.h;
        let iy = row % g.h;
        for ky in 0..g.k {
            let oy = (iy + g.pad_top) as isize - ky as isize;
            if oy < 0 || oy >= g.ho as isize {
                continue;
            }
            for kx in 0..g.k {
                let wk = &w[(ky * g.k + kx) * g.c..][..g.c];
                for ix in 0..g.w {
                    let ox = (ix + g.pad_left) as isize - kx as isize;
                    if ox < 0 || ox >= g.wo as isize {
                        continue;
                    }
                    let src = &dy[((b * g.ho + oy as usize) * g.wo + ox as usize) * g.c..][..g.c];
                    let dst = &mut drow[ix * g.c..(ix + 1) * g.c];
                    for c in 0..g.c {
                        dst[c] = dst[c] + src[c] * wk[c];
                    }
                }
            }
        }
    });
    let kkc = g.k * g.k * g.c;
    let partials = par::map_collect(g.b * g.ho, |row| {
        let b = row / g.ho;
        let oy = row % g.ho;
        let mut p = vec![T::zero(); kkc];
        for ky in 0..g.k {
            let iy = (oy + ky) as isize - g.pad_top as isize;
            if iy < 0 || iy >= g.h as isize {
                continue;
            }
            for kx in 0..g.k {
                let pk = &mut p[(ky * g.k + kx) * g.c..][..g.c];
                for ox in 0..g.wo {
                    let ix = (ox + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let src = &x[((b * g.h + iy as usize) * g.w + ix as usize) * g.c..][..g.c];
                    let gy = &dy[((b * g.ho + oy) * g.wo + ox) * g.c..][..g.c];
                    for c in 0..g.c {
                        pk[c] = pk[c] + src[c] * gy[c];
                    }
                }
            }
        }
        p
    });
    let mut dw = vec![T::zero(); kkc];
    for p in partials {
        for (o, v) in dw.iter_mut().zip(p) {
            *o = *o + v;
        }
    }
    (dx, dw)
}

impl<T: Scalar> Tape<T> {
    /// Dense 2D convolution. `weights` is `k × k × C_in × C_out`.
    pub fn conv2d(&mut self, x: Var, weights: Var, stride: usize, padding: Padding) -> Result<Var> {
        self.check(x)?;
        self.check(weights)?;
        let ws = self.shape(weights).to_vec();
        let [k, k2, ci, co] = ws[..] else {
            return Err(shape_err("conv2d", format!("weights must be k×k×C_in×C_out, got {ws:?}")));
        };
        if k != k2 {
            return Err(shape_err("conv2d", format!("non-square kernel {ws:?}")));
        }
        if stride == 0 {
            return Err(arg_err("conv2d", "stride must be >= 1"));
        }
        let g = geometry("conv2d", self.shape(x), k, stride, co, padding)?;
        if g.c != ci {
            return Err(shape_err(
                "conv2d",
                format!("input has {} channels but weights expect {ci} (input {:?}, weights {ws:?})", g.c, self.shape(x)),
            ));
        }
        let out = conv2d_forward(self.value(x).data(), self.value(weights).data(), &g);
        self.add_macs((g.b * g.ho * g.wo * k * k * ci * co) as u64);
        let value = Tensor::new([g.b, g.ho, g.wo, co], out)?;
        Ok(self.push(value, Op::Conv2d { x, w: weights, geom: g }))
    }

    /// Depthwise convolution with one `k × k` filter per channel, stride 1,
    /// same padding. `weights` is `k × k × C`.
    pub fn depthwise_conv2d(&mut self, x: Var, weights: Var) -> Result<Var> {
        self.check(x)?;
        self.check(weights)?;
        let ws = self.shape(weights).to_vec();
        let [k, k2, c] = ws[..] else {
            return Err(shape_err("depthwise_conv2d", format!("weights must be k×k×C, got {ws:?}")));
        };
        if k != k2 {
            return Err(shape_err("depthwise_conv2d", format!("non-square kernel {ws:?}")));
        }
        let g = geometry("depthwise_conv2d", self.shape(x), k, 1, c, Padding::Same)?;
        if g.c != c {
            return Err(shape_err(
                "depthwise_conv2d",
                format!("input has {} channels, depthwise filters {c}", g.c),
            ));
        }
        let out = depthwise_forward(self.value(x).data(), self.value(weights).data(), &g);
        self.add_macs((g.b * g.ho * g.wo * k * k * c) as u64);
        let value = Tensor::new([g.b, g.ho, g.wo, c], out)?;
        Ok(self.push(value, Op::Depthwise { x, w: weights, geom: g }))
    }

    /// Depthwise `k × k × C` followed by pointwise `1 × 1 × C × C_out`.
    pub fn separable_conv2d(&mut self, x: Var, depthwise: Var, pointwise: Var) -> Result<Var> {
        self.check(pointwise)?;
        let ps = self.shape(pointwise).to_vec();
        let ds = self.shape(depthwise).to_vec();
        if ps.len() != 4 || ps[0] != 1 || ps[1] != 1 || ds.len() != 3 || ps[2] != ds[2] {
            return Err(shape_err(
                "separable_conv2d",
                format!("pointwise {ps:?} incompatible with depthwise {ds:?}"),
            ));
        }
        let y = self.depthwise_conv2d(x, depthwise)?;
        self.conv2d(y, pointwise, 1, Padding::Same)
    }
}
