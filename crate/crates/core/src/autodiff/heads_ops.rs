use super::basic::spatial_softmax_in_place;
use super::{Op, Tape, Var};
use crate::error::{arg_err, shape_err, Result};
use crate::heads::{confidence_plane, depth_attention_plane, soft_argmax_backward_plane, soft_argmax_plane, Ramps};
use crate::par;
use crate::tensor::{Scalar, Tensor};

fn gather_plane<T: Scalar>(img: &[T], hw: usize, n: usize, j: usize) -> Vec<T> {
    (0..hw).map(|p| img[p * n + j]).collect()
}

pub(super) fn soft_argmax_backward<T: Scalar>(h: &Tensor<T>, ramps: &Ramps<T>, g: &[T]) -> Vec<T> {
    let (_, hh, w, n) = h.dims4().expect("rank 4");
    let hw = hh * w;
    let hd = h.data();
    let mut dh = vec![T::zero(); hd.len()];
    par::for_each_chunk_mut(&mut dh, hw * n, |bi, img| {
        let src = &hd[bi * hw * n..(bi + 1) * hw * n];
        for j in 0..n {
            let plane = gather_plane(src, hw, n, j);
            let gi = (bi * n + j) * 2;
            let d = soft_argmax_backward_plane(&plane, ramps, g[gi], g[gi + 1]);
            for (p, v) in d.into_iter().enumerate() {
                img[p * n + j] = v;
            }
        }
    });
    dh
}

pub(super) fn depth_attention_backward<T: Scalar>(
    h: &Tensor<T>,
    d: &Tensor<T>,
    out: &Tensor<T>,
    g: &[T],
) -> (Vec<T>, Vec<T>) {
    let (b, hh, w, n) = h.dims4().expect("rank 4");
    let hw = hh * w;
    let mut phi = h.data().to_vec();
    spatial_softmax_in_place(&mut phi, b, hw, n);
    let dd_src = d.data();
    let z = out.data();
    let mut dh = vec![T::zero(); phi.len()];
    let mut dd = vec![T::zero(); phi.len()];
    for (i, ((dhv, ddv), &p)) in dh.iter_mut().zip(dd.iter_mut()).zip(&phi).enumerate() {
        let bi = i / (hw * n);
        let j = i % n;
        let up = g[bi * n + j];
        *dhv = up * p * (dd_src[i] - z[bi * n + j]);
        *ddv = up * p;
    }
    (dh, dd)
}

pub(super) fn confidence_backward<T: Scalar>(p: &Tensor<T>, windows: &[usize], g: &[T]) -> Vec<T> {
    let (b, _, w, n) = p.dims4().expect("rank 4");
    let hw = p.len() / (b * n);
    let mut dp = vec![T::zero(); p.len()];
    for bi in 0..b {
        for j in 0..n {
            let t = windows[bi * n + j];
            let up = g[bi * n + j];
            for cell in [t, t + 1, t + w, t + w + 1] {
                let i = (bi * hw + cell) * n + j;
                dp[i] = dp[i] + up;
            }
        }
    }
    dp
}

impl<T: Scalar> Tape<T> {
    /// Expected normalized `(x, y)` of every heatmap plane of a
    /// `B × H × W × N` tensor, as `B × N × 2`.
    pub fn soft_argmax(&mut self, h: Var) -> Result<Var> {
        self.check(h)?;
        let (b, hh, w, n) = self.value(h).dims4()?;
        let ramps = self.ramps(hh, w)?;
        let hw = hh * w;
        let hd = self.value(h).data();
        let rows = par::map_collect(b * n, |k| {
            let (bi, j) = (k / n, k % n);
            let plane = gather_plane(&hd[bi * hw * n..(bi + 1) * hw * n], hw, n, j);
            soft_argmax_plane(&plane, &ramps)
        });
        let data = rows.into_iter().flat_map(|(x, y)| [x, y]).collect();
        let value = Tensor::new([b, n, 2], data)?;
        Ok(self.push(value, Op::SoftArgmax { h, ramps }))
    }

    /// Depth read out of `d` under the softmax attention of `h`, as `B × N × 1`.
    pub fn depth_attention(&mut self, h: Var, d: Var) -> Result<Var> {
        self.check(h)?;
        self.check(d)?;
        if self.shape(h) != self.shape(d) {
            return Err(shape_err(
                "depth_attention",
                format!("heatmaps {:?} vs depth maps {:?}", self.shape(h), self.shape(d)),
            ));
        }
        let (b, hh, w, n) = self.value(h).dims4()?;
        let hw = hh * w;
        let hd = self.value(h).data();
        let dd = self.value(d).data();
        let data = par::map_collect(b * n, |k| {
            let (bi, j) = (k / n, k % n);
            let img = bi * hw * n..(bi + 1) * hw * n;
            depth_attention_plane(&gather_plane(&hd[img.clone()], hw, n, j), &gather_plane(&dd[img], hw, n, j))
        });
        let value = Tensor::new([b, n, 1], data)?;
        Ok(self.push(value, Op::DepthAttention { h, d }))
    }

    /// Largest 2×2 window mass of each normalized plane of `p`, as `B × N × 1`.
    ///
    /// Gradients flow only into the four cells of the selected window.
    pub fn window_confidence(&mut self, p: Var) -> Result<Var> {
        self.check(p)?;
        let (b, hh, w, n) = self.value(p).dims4()?;
        if hh < 2 || w < 2 {
            return Err(arg_err("confidence_score", format!("plane {hh}×{w} smaller than 2×2")));
        }
        let hw = hh * w;
        let pd = self.value(p).data();
        let res = par::map_collect(b * n, |k| {
            let (bi, j) = (k / n, k % n);
            confidence_plane(&gather_plane(&pd[bi * hw * n..(bi + 1) * hw * n], hw, n, j), hh, w)
        });
        let mut data = Vec::with_capacity(b * n);
        let mut windows = Vec::with_capacity(b * n);
        for r in res {
            let (c, t) = r?;
            data.push(c);
            windows.push(t);
        }
        let value = Tensor::new([b, n, 1], data)?;
        Ok(self.push(value, Op::Confidence { p, windows }))
    }

    /// Confidence of raw heatmaps: spatial softmax followed by the 2×2
    /// window maximum.
    pub fn confidence_score(&mut self, h: Var) -> Result<Var> {
        let p = self.spatial_softmax(h)?;
        self.window_confidence(p)
    }

    /// Pose `B × N × 3` (normalized x, y, depth) and confidence `B × N × 1`
    /// from heatmaps and depth maps of one prediction block.
    pub fn assemble_predictions(&mut self, h: Var, d: Var) -> Result<(Var, Var)> {
        let xy = self.soft_argmax(h)?;
        let z = self.depth_attention(h, d)?;
        let pose = self.concat_last(&[xy, z])?;
        let conf = self.confidence_score(h)?;
        Ok((pose, conf))
    }
}
