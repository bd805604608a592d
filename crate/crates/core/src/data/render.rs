//! Stick-figure rasteriser.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::skeleton::{FigureTemplate, NUM_JOINTS, ROOT};
use super::SyntheticSample;
use crate::error::{Error, Result};
use crate::eval::camera::{CameraModel, DEPTH_RANGE_MM};
use crate::tensor::Tensor;

/// Focal length (px) used for a canvas of width `w`.
pub fn canvas_focal(w: usize) -> f64 {
    2.0 * w as f64
}

pub fn hue_rgb(h: f64) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let x = 1.0 - (h6 % 2.0 - 1.0).abs();
    let (r, g, b) = match h6 as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r as f32, g as f32, b as f32]
}

fn background(height: usize, width: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut waves = [[0.0f64; 4]; 9];
    for w in &mut waves {
        *w = [
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.04..0.12),
        ];
    }
    let base: [f64; 3] = [rng.random_range(0.25..0.6), rng.random_range(0.25..0.6), rng.random_range(0.25..0.6)];
    let mut img = vec![0.0f32; height * width * 3];
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let mut v = base[c];
                for w in &waves[c * 3..c * 3 + 3] {
                    v += w[3] * (w[0] * x as f64 + w[1] * y as f64 + w[2]).sin();
                }
                v += rng.random_range(-0.04..0.04);
                img[(y * width + x) * 3 + c] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    img
}

fn blend(img: &mut [f32], width: usize, x: usize, y: usize, color: [f32; 3], alpha: f32) {
    let o = (y * width + x) * 3;
    for c in 0..3 {
        img[o + c] = img[o + c] * (1.0 - alpha) + color[c] * alpha;
    }
}

// distance from p to segment ab
fn seg_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
    (q[0] * q[0] + q[1] * q[1]).sqrt()
}

/// Draws a capsule of half-width `r` between `a` and `b` (pixel coords).
fn draw_capsule(img: &mut [f32], height: usize, width: usize, a: [f64; 2], b: [f64; 2], r: f64, color: [f32; 3]) {
    let x0 = (a[0].min(b[0]) - r - 1.0).floor().max(0.0) as usize;
    let y0 = (a[1].min(b[1]) - r - 1.0).floor().max(0.0) as usize;
    let x1 = ((a[0].max(b[0]) + r + 1.0).ceil().max(0.0) as usize).min(width);
    let y1 = ((a[1].max(b[1]) + r + 1.0).ceil().max(0.0) as usize).min(height);
    for y in y0..y1 {
        for x in x0..x1 {
            let d = seg_dist([x as f64 + 0.5, y as f64 + 0.5], a, b);
            let cover = (r + 0.5 - d).clamp(0.0, 1.0);
            if cover > 0.0 {
                blend(img, width, x, y, color, cover as f32);
            }
        }
    }
}

/// Renders `pose` (camera frame, mm) on a `height`×`width` canvas.
///
/// The background texture is drawn from `texture_seed`.
pub fn render(
    template: &FigureTemplate,
    pose: &[[f64; 3]; NUM_JOINTS],
    camera: &CameraModel,
    texture_seed: u64,
) -> Result<SyntheticSample> {
    let (height, width) = (camera.height, camera.width);
    let mut px = [[0.0f64; 2]; NUM_JOINTS];
    for (j, p) in pose.iter().enumerate() {
        px[j] = camera.project(*p).map_err(|_| Error::BehindCamera { joint: j, z: p[2] })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(texture_seed);
    let mut img = background(height, width, &mut rng);
    let s = width.min(height) as f64;
    let limb_r = 0.018 * s / 2.0 + 0.5;
    let disk_r = 0.025 * s;

    // far to near
    let mut order: Vec<usize> = (1..NUM_JOINTS).collect();
    let depth = |j: usize| {
        let p = template.parents[j].unwrap_or(ROOT);
        (pose[j][2] + pose[p][2]) / 2.0
    };
    order.sort_by(|&a, &b| depth(b).total_cmp(&depth(a)));
    for &j in &order {
        let p = template.parents[j].unwrap_or(ROOT);
        let c = hue_rgb(j as f64 / NUM_JOINTS as f64).map(|v| 0.35 + 0.65 * v);
        draw_capsule(&mut img, height, width, px[p], px[j], limb_r, c);
    }
    let mut jorder: Vec<usize> = (0..NUM_JOINTS).collect();
    jorder.sort_by(|&a, &b| pose[b][2].total_cmp(&pose[a][2]));
    for &j in &jorder {
        draw_capsule(&mut img, height, width, px[j], px[j], disk_r, hue_rgb(j as f64 / NUM_JOINTS as f64));
    }

    let z_root = pose[ROOT][2];
    let mut gt_xy = [[0.0; 2]; NUM_JOINTS];
    let mut gt_z = [0.0; NUM_JOINTS];
    let mut visible = [false; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        gt_xy[j] = [px[j][0] / width as f64, px[j][1] / height as f64];
        gt_z[j] = ((pose[j][2] - z_root) / DEPTH_RANGE_MM + 0.5).clamp(0.0, 1.0);
        visible[j] = inside(gt_xy[j]);
    }
    gt_z[ROOT] = 0.5;
    Ok(SyntheticSample {
        image: Tensor::new([height, width, 3], img)?,
        gt_xy,
        gt_z,
        visible,
        has_depth: true,
        camera: CameraModel { z_root, ..*camera },
        pose3d: *pose,
        seed: texture_seed,
    })
}

pub(crate) fn inside(p: [f64; 2]) -> bool {
    (0.0..1.0).contains(&p[0]) && (0.0..1.0).contains(&p[1])
}
