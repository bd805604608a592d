use super::conv::{conv_out_extent, Padding};
use super::{Op, PoolGeom, Tape, Var};
use crate::error::{arg_err, shape_err, Result};
use crate::par;
use crate::tensor::{Scalar, Tensor};

/// Pooling reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Sum,
}

fn pool_geometry(xs: &[usize], window: usize, stride: usize, padding: Padding) -> Result<PoolGeom> {
    let [b, h, w, c] = xs[..] else {
        return Err(shape_err("pool2d", format!("input must be B×H×W×C, got {xs:?}")));
    };
    if window == 0 || stride == 0 {
        return Err(arg_err("pool2d", "window and stride must be >= 1"));
    }
    if window > h || window > w {
        return Err(arg_err("pool2d", format!("window {window} larger than spatial extent {h}×{w}")));
    }
    let (ho, pad_top) = conv_out_extent(h, window, stride, padding).expect("validated");
    let (wo, pad_left) = conv_out_extent(w, window, stride, padding).expect("validated");
    Ok(PoolGeom { b, h, w, c, window, stride, ho, wo, pad_top, pad_left })
}

/// Visits the in-bounds input rows/cols of output cell `(oy, ox)`.
#[inline]
fn window_range(o: usize, g_stride: usize, pad: usize, window: usize, n: usize) -> (usize, usize) {
    let start = (o * g_stride) as isize - pad as isize;
    let lo = start.max(0) as usize;
    let hi = ((start + window as isize).min(n as isize)).max(0) as usize;
    (lo, hi)
}

fn max_pool_forward<T: Scalar>(x: &[T], g: &PoolGeom) -> (Vec<T>, Vec<usize>) {
    let n = g.b * g.ho * g.wo * g.c;
    let mut out = vec![T::zero(); n];
    let mut arg = vec![usize::MAX; n];
    // Pair each output with its argmax so one task owns both.
    let mut paired: Vec<(T, usize)> = vec![(T::zero(), 0); n];
    par::for_each_chunk_mut(&mut paired, g.wo * g.c, |row, chunk| {
        let b = row / g.ho;
        let oy = row % g.ho;
        let (y0, y1) = window_range(oy, g.stride, g.pad_top, g.window, g.h);
        for ox in 0..g.wo {
            let (x0, x1) = window_range(ox, g.stride, g.pad_left, g.window, g.w);
            for c in 0..g.c {
                let mut best = T::neg_infinity();
                let mut best_i = usize::MAX;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let i = ((b * g.h + iy) * g.w + ix) * g.c + c;
                        if x[i] > best || best_i == usize::MAX {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                chunk[ox * g.c + c] = (best, best_i);
            }
        }
    });
    for (i, (v, a)) in paired.into_iter().enumerate() {
        out[i] = v;
        arg[i] = a;
    }
    (out, arg)
}

pub(super) fn max_pool_backward<T: Scalar>(argmax: &[usize], dy: &[T], g: &PoolGeom) -> Vec<T> {
    let image = g.h * g.w * g.c;
    let per_out = g.ho * g.wo * g.c;
    let mut dx = vec![T::zero(); g.b * image];
    par::for_each_chunk_mut(&mut dx, image, |b, img| {
        for o in b * per_out..(b + 1) * per_out {
            let i = argmax[o] - b * image;
            img[i] = img[i] + dy[o];
        }
    });
    dx
}

fn sum_pool_forward<T: Scalar>(x: &[T], g: &PoolGeom) -> Vec<T> {
    let mut out = vec![T::zero(); g.b * g.ho * g.wo * g.c];
    par::for_each_chunk_mut(&mut out, g.wo * g.c, |row, chunk| {
        let b = row / g.ho;
        let oy = row % g.ho;
        let (y0, y1) = window_range(oy, g.stride, g.pad_top, g.window, g.h);
        for ox in 0..g.wo {
            let (x0, x1) = window_range(ox, g.stride, g.pad_left, g.window, g.w);
            let dst = &mut chunk[ox * g.c..(ox + 1) * g.c];
            for iy in y0..y1 {
                for ix in x0..x1 {
                    let src = &x[((b * g.h + iy) * g.w + ix) * g.c..][..g.c];
                    for c in 0..g.c {
                        dst[c] = dst[c] + src[c];
                    }
                }
            }
        }
    });
    out
}

pub(super) fn sum_pool_backward<T: Scalar>(dy: &[T], g: &PoolGeom) -> Vec<T> {
    let image = g.h * g.w * g.c;
    let mut dx = vec![T::zero(); g.b * image];
    par::for_each_chunk_mut(&mut dx, image, |b, img| {
        for oy in 0..g.ho {
            let (y0, y1) = window_range(oy, g.stride, g.pad_top, g.window, g.h);
            for ox in 0..g.wo {
                let (x0, x1) = window_range(ox, g.stride, g.pad_left, g.window, g.w);
                let src = &dy[((b * g.ho + oy) * g.wo + ox) * g.c..][..g.c];
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let d = (iy * g.w + ix) * g.c;
                        for c in 0..g.c {
                            img[d + c] = img[d + c] + src[c];
                        }
                    }
                }
            }
        }
    });
    dx
}

pub(super) fn upsample2x_backward<T: Scalar>(in_shape: &[usize], dy: &[T]) -> Vec<T> {
    let (b, h, w, c) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let mut dx = vec![T::zero(); b * h * w * c];
    par::for_each_chunk_mut(&mut dx, w * c, |row, drow| {
        let bb = row / h;
        let y = row % h;
        for dy_ in 0..2 {
            let oy = 2 * y + dy_;
            for x in 0..w {
                for dx_ in 0..2 {
                    let ox = 2 * x + dx_;
                    let src = &dy[((bb * 2 * h + oy) * 2 * w + ox) * c..][..c];
                    for ch in 0..c {
                        drow[x * c + ch] = drow[x * c + ch] + src[ch];
                    }
                }
            }
        }
    });
    dx
}

impl<T: Scalar> Tape<T> {
    pub fn pool2d(&mut self, x: Var, kind: PoolKind, window: usize, stride: usize, padding: Padding) -> Result<Var> {
        self.check(x)?;
        let g = pool_geometry(self.shape(x), window, stride, padding)?;
        let shape = [g.b, g.ho, g.wo, g.c];
        match kind {
            PoolKind::Max => {
                let (out, argmax) = max_pool_forward(self.value(x).data(), &g);
                Ok(self.push(Tensor::new(shape, out)?, Op::MaxPool { x, argmax, geom: g }))
            }
            PoolKind::Sum => {
                let out = sum_pool_forward(self.value(x).data(), &g);
                Ok(self.push(Tensor::new(shape, out)?, Op::SumPool { x, geom: g }))
            }
        }
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let (b, h, w, c) = self.value(x).dims4()?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); b * 4 * h * w * c];
        par::for_each_chunk_mut(&mut out, 2 * w * c, |row, orow| {
            let bb = row / (2 * h);
            let y = (row % (2 * h)) / 2;
            for ox in 0..2 * w {
                let s = &src[((bb * h + y) * w + ox / 2) * c..][..c];
                orow[ox * c..(ox + 1) * c].copy_from_slice(s);
            }
        });
        Ok(self.push(Tensor::new([b, 2 * h, 2 * w, c], out)?, Op::Upsample2x { x }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn max_2x2() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.pool2d(x, PoolKind::Max, 2, 2, Padding::Valid).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn sum_2x2_stride1_uniform() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::filled([1, 4, 4, 1], 1.0 / 16.0));
        let y = tape.pool2d(x, PoolKind::Sum, 2, 1, Padding::Valid).unwrap();
        assert_eq!(tape.shape(y), &[1, 3, 3, 1]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.25));
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        // corners are covered by one window, center cells by four
        let gx = g.get(x).unwrap();
        assert_eq!(gx[0], 1.0);
        assert_eq!(gx[5], 4.0);
    }

    #[test]
    fn max_3x3_stride2_same() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros([1, 128, 128, 64]));
        let y = tape.pool2d(x, PoolKind::Max, 3, 2, Padding::Same).unwrap();
        assert_eq!(tape.shape(y), &[1, 64, 64, 64]);
    }

    #[test]
    fn window_too_large() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros([1, 2, 2, 1]));
        assert!(tape.pool2d(x, PoolKind::Max, 3, 1, Padding::Valid).is_err());
        assert!(tape.pool2d(x, PoolKind::Sum, 3, 1, Padding::Same).is_err());
    }

    #[test]
    fn upsample_values_and_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.upsample2x(x).unwrap();
        assert_eq!(
            tape.value(y).data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[4.0; 4]);
    }

    #[test]
    fn upsample_after_maxpool_preserves_shape() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros([2, 6, 8, 3]));
        let p = tape.pool2d(x, PoolKind::Max, 2, 2, Padding::Same).unwrap();
        let u = tape.upsample2x(p).unwrap();
        assert_eq!(tape.shape(u), tape.shape(x));
    }

    #[test]
    fn pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::from_fn([2, 7, 6, 2], |_| rng.random_range(-1.0..1.0));
        for kind in [PoolKind::Max, PoolKind::Sum] {
            let err = finite_diff_check(
                |t, xv| {
                    let y = t.pool2d(xv, kind, 3, 2, Padding::Same)?;
                    let yy = t.mul(y, y)?;
                    t.sum(yy)
                },
                &x,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "{kind:?}: {err}");
        }
        let err = finite_diff_check(
            |t, xv| {
                let y = t.upsample2x(xv)?;
                let yy = t.mul(y, y)?;
                t.sum(yy)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5);
    }
}
