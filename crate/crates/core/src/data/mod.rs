//! Synthetic training data: articulated figures, rendering, augmentation
//! and batching.

pub mod augment;
pub mod cache;
pub mod render;
pub mod skeleton;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use augment::{augment, AugmentParams, AugmentRanges};
pub use render::render;
pub use skeleton::{FigureTemplate, JOINT_NAMES, NUM_JOINTS, ROOT};

use crate::error::{arg_err, Result};
use crate::eval::camera::CameraModel;
use crate::par;
use crate::tensor::{Scalar, Tensor};

/// One rendered training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    /// `[H, W, 3]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// Normalized image coordinates, top-left corner at `(0, 0)`. May fall
    /// outside `[0, 1]` for joints that left the frame.
    pub gt_xy: [[f64; 2]; NUM_JOINTS],
    /// Relative depth: root at 0.5, 2 m range, clamped to `[0, 1]`.
    pub gt_z: [f64; NUM_JOINTS],
    pub visible: [bool; NUM_JOINTS],
    /// `false` for 2D-only samples.
    pub has_depth: bool,
    pub camera: CameraModel,
    /// Camera-frame joints (mm) of the rendered, un-augmented figure.
    pub pose3d: [[f64; 3]; NUM_JOINTS],
    pub seed: u64,
}

/// Knobs of the sample generator.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub height: usize,
    pub width: usize,
    /// Probability that a sample is 2D-only.
    pub two_d_fraction: f64,
    pub augment: bool,
    pub ranges: AugmentRanges,
}

impl DataConfig {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, two_d_fraction: 0.0, augment: true, ranges: AugmentRanges::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(arg_err("data", "zero canvas size"));
        }
        if !(0.0..=1.0).contains(&self.two_d_fraction) {
            return Err(arg_err("data", format!("two_d_fraction {} outside [0, 1]", self.two_d_fraction)));
        }
        self.ranges.validate()
    }
}

/// SplitMix64 finaliser over `(base, stream, index)`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sample for `seed`.
pub fn generate_sample(cfg: &DataConfig, seed: u64) -> Result<SyntheticSample> {
    cfg.validate()?;
    let template = FigureTemplate::human();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = template.sample_figure(&mut rng);
    let has_depth = rng.random::<f64>() >= cfg.two_d_fraction;
    let camera = CameraModel::centered(render::canvas_focal(cfg.width), cfg.width, cfg.height, pose[ROOT][2])?;
    let mut s = render(&template, &pose, &camera, seed)?;
    s.has_depth = has_depth;
    if cfg.augment {
        let p = AugmentParams::sample(&cfg.ranges, derive_seed(seed, 1, 0));
        s = augment(&s, &p)?;
    }
    Ok(s)
}

/// Samples for `seeds`, generated in parallel and returned in order.
pub fn generate_many(cfg: &DataConfig, seeds: &[u64]) -> Result<Vec<SyntheticSample>> {
    par::map_collect(seeds.len(), |i| generate_sample(cfg, seeds[i])).into_iter().collect()
}

/// Network inputs and targets for a list of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    /// `[B, H, W, 3]`
    pub images: Tensor<T>,
    /// `[B, N, 3]`: x, y, z targets.
    pub pose: Tensor<T>,
    /// `[B, N, 3]`: zero for invisible joints, z column zero for 2D-only.
    pub mask: Tensor<T>,
    /// `[B, N, 1]`: visibility.
    pub conf: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_samples(samples: &[SyntheticSample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| arg_err("batch", "no samples"))?;
        let shape = first.image.shape().to_vec();
        let b = samples.len();
        let mut images = Vec::with_capacity(b * first.image.len());
        let mut pose = Vec::with_capacity(b * NUM_JOINTS * 3);
        let mut mask = Vec::with_capacity(b * NUM_JOINTS * 3);
        let mut conf = Vec::with_capacity(b * NUM_JOINTS);
        for s in samples {
            if s.image.shape() != shape.as_slice() {
                return Err(arg_err("batch", format!("image shape {:?} vs {:?}", s.image.shape(), shape)));
            }
            images.extend(s.image.data().iter().map(|&v| T::c(v as f64)));
            for j in 0..NUM_JOINTS {
                pose.extend([s.gt_xy[j][0], s.gt_xy[j][1], s.gt_z[j]].map(T::c));
                let v = if s.visible[j] { 1.0 } else { 0.0 };
                let vz = if s.has_depth { v } else { 0.0 };
                mask.extend([v, v, vz].map(T::c));
                conf.push(T::c(v));
            }
        }
        Ok(Self {
            images: Tensor::new([b, shape[0], shape[1], shape[2]], images)?,
            pose: Tensor::new([b, NUM_JOINTS, 3], pose)?,
            mask: Tensor::new([b, NUM_JOINTS, 3], mask)?,
            conf: Tensor::new([b, NUM_JOINTS, 1], conf)?,
        })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = DataConfig::new(64, 64);
        let a = generate_sample(&cfg, 11).unwrap();
        let b = generate_sample(&cfg, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_sample(&cfg, 12).unwrap();
        assert_ne!(a.image, c.image);
        let many = generate_many(&cfg, &[11, 12]).unwrap();
        assert_eq!(many[0], a);
        assert_eq!(many[1], c);
    }

    #[test]
    fn sample_invariants() {
        let cfg = DataConfig { two_d_fraction: 0.5, ..DataConfig::new(64, 64) };
        let mut two_d = 0;
        for seed in 0..40 {
            let s = generate_sample(&cfg, seed).unwrap();
            assert_eq!(s.gt_z[ROOT], 0.5);
            assert!(s.gt_z.iter().all(|z| (0.0..=1.0).contains(z)));
            for j in 0..NUM_JOINTS {
                if !render::inside(s.gt_xy[j]) {
                    assert!(!s.visible[j]);
                }
            }
            two_d += usize::from(!s.has_depth);
        }
        assert!(two_d > 5 && two_d < 35);
    }

    #[test]
    fn most_joints_land_in_frame() {
        let cfg = DataConfig { augment: false, ..DataConfig::new(128, 128) };
        let vis: usize = (0..50).map(|s| generate_sample(&cfg, s).unwrap().visible.iter().filter(|v| **v).count()).sum();
        assert!(vis as f64 / (50.0 * 17.0) > 0.95, "{vis}");
    }

    #[test]
    fn batch_masks() {
        let cfg = DataConfig { augment: false, ..DataConfig::new(32, 32) };
        let mut s = vec![generate_sample(&cfg, 1).unwrap(), generate_sample(&cfg, 2).unwrap()];
        s[1].has_depth = false;
        s[0].visible[4] = false;
        let b = Batch::<f64>::from_samples(&s).unwrap();
        assert_eq!(b.images.shape(), &[2, 32, 32, 3]);
        let m = b.mask.data();
        assert_eq!(&m[4 * 3..4 * 3 + 3], &[0.0, 0.0, 0.0]);
        assert_eq!(&m[3..6], &[1.0, 1.0, 1.0]);
        let second = &m[NUM_JOINTS * 3..];
        assert!(second.chunks(3).all(|c| c[2] == 0.0));
        assert_eq!(b.conf.data()[4], 0.0);
        assert!(Batch::<f64>::from_samples(&[]).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let mut seen = std::collections::HashSet::new();
        for s in 0..4 {
            for i in 0..100 {
                assert!(seen.insert(derive_seed(7, s, i)));
            }
        }
    }
}
