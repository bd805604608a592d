//! Planar rotation/scale and colour-gain augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::render::inside;
use super::SyntheticSample;
use crate::error::{arg_err, Result};
use crate::tensor::Tensor;

/// Sampling ranges for [`AugmentParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentRanges {
    /// Rotations are drawn from `[-max_rotation_deg, max_rotation_deg]`.
    pub max_rotation_deg: f64,
    pub scale: (f64, f64),
    pub gain: (f64, f64),
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self { max_rotation_deg: 30.0, scale: (0.7, 1.3), gain: (0.9, 1.1) }
    }
}

impl AugmentRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_rotation_deg >= 0.0
            && self.max_rotation_deg <= 30.0
            && 0.7 <= self.scale.0
            && self.scale.0 <= self.scale.1
            && self.scale.1 <= 1.3
            && 0.9 <= self.gain.0
            && self.gain.0 <= self.gain.1
            && self.gain.1 <= 1.1;
        if ok {
            Ok(())
        } else {
            Err(arg_err("augment", format!("ranges outside ±30°, 0.7..1.3, 0.9..1.1: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub scale: f64,
    pub gain: [f64; 3],
    pub seed: u64,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self { rotation_deg: 0.0, scale: 1.0, gain: [1.0; 3], seed: 0 };

    pub fn sample(ranges: &AugmentRanges, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = ranges.max_rotation_deg;
        let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let rotation_deg = draw(&mut rng, (-r, r));
        let scale = draw(&mut rng, ranges.scale);
        let gain = [draw(&mut rng, ranges.gain), draw(&mut rng, ranges.gain), draw(&mut rng, ranges.gain)];
        Self { rotation_deg, scale, gain, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (-30.0..=30.0).contains(&self.rotation_deg)
            && (0.7..=1.3).contains(&self.scale)
            && self.gain.iter().all(|g| (0.9..=1.1).contains(g));
        if ok {
            Ok(())
        } else {
            Err(arg_err("augment", format!("parameters out of range: {self:?}")))
        }
    }

    fn is_identity_geometry(&self) -> bool {
        self.rotation_deg == 0.0 && self.scale == 1.0
    }

    /// Maps a pixel-space point through the forward transform.
    pub fn transform_px(&self, p: [f64; 2], height: usize, width: usize) -> [f64; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        [cx + self.scale * (c * dx - s * dy), cy + self.scale * (s * dx + c * dy)]
    }

    fn inverse_px(&self, q: [f64; 2], height: usize, width: usize) -> [f64; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let (dx, dy) = ((q[0] - cx) / self.scale, (q[1] - cy) / self.scale);
        [cx + c * dx + s * dy, cy - s * dx + c * dy]
    }
}

// constant fill for pixels sampled from outside the source
const FILL: f32 = 0.5;

fn bilinear(src: &[f32], height: usize, width: usize, u: f64, v: f64, out: &mut [f32]) {
    // pixel centres sit at integer + 0.5
    let (fx, fy) = (u - 0.5, v - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = ((fx - x0) as f32, (fy - y0) as f32);
    let fetch = |x: f64, y: f64, c: usize| -> f32 {
        if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
            FILL
        } else {
            src[(y as usize * width + x as usize) * 3 + c]
        }
    };
    for (c, o) in out.iter_mut().enumerate() {
        let a = fetch(x0, y0, c) * (1.0 - tx) + fetch(x0 + 1.0, y0, c) * tx;
        let b = fetch(x0, y0 + 1.0, c) * (1.0 - tx) + fetch(x0 + 1.0, y0 + 1.0, c) * tx;
        *o = a * (1.0 - ty) + b * ty;
    }
}

/// Applies `params` to `sample`; depth targets are untouched.
pub fn augment(sample: &SyntheticSample, params: &AugmentParams) -> Result<SyntheticSample> {
    params.validate()?;
    let (height, width) = (sample.image.shape()[0], sample.image.shape()[1]);
    let mut out = sample.clone();
    if !params.is_identity_geometry() {
        let src = sample.image.data();
        let mut img = vec![0.0f32; src.len()];
        for y in 0..height {
            for x in 0..width {
                let [u, v] = params.inverse_px([x as f64 + 0.5, y as f64 + 0.5], height, width);
                let o = (y * width + x) * 3;
                bilinear(src, height, width, u, v, &mut img[o..o + 3]);
            }
        }
        out.image = Tensor::new([height, width, 3], img)?;
        for (j, xy) in out.gt_xy.iter_mut().enumerate() {
            let [u, v] = params.transform_px([xy[0] * width as f64, xy[1] * height as f64], height, width);
            *xy = [u / width as f64, v / height as f64];
            out.visible[j] = sample.visible[j] && inside(*xy);
        }
    }
    if params.gain != [1.0; 3] {
        let g = params.gain.map(|g| g as f32);
        for px in out.image.data_mut().chunks_mut(3) {
            for (v, g) in px.iter_mut().zip(g) {
                *v = (*v * g).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}
