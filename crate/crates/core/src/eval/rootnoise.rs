//! Sensitivity of millimeter reconstructions to the absolute root depth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::camera::{CameraModel, DEPTH_RANGE_MM};
use super::metrics::mpjpe;
use crate::data::{derive_seed, FigureTemplate, NUM_JOINTS, ROOT};
use crate::error::{arg_err, Result};

pub const SIGMAS_MM: [f64; 5] = [0.0, 25.0, 50.0, 100.0, 150.0];

/// Per-axis model error (mm) used for the baseline-relative column.
pub const MODEL_ERROR_MM: f64 = 30.0;

/// Camera of the evaluation geometry: f = 1150 px on a 1000×1000 image.
pub fn eval_camera(z_root: f64) -> Result<CameraModel> {
    CameraModel::centered(1150.0, 1000, 1000, z_root)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootNoiseRow {
    pub sigma_mm: f64,
    /// Root-aligned MPJPE between the reconstruction with the perturbed root
    /// depth and the one with the true root depth.
    pub increase_mm: f64,
    /// MPJPE to ground truth of noisy-model predictions reconstructed with
    /// the perturbed root, minus the same with the true root.
    pub increase_vs_model_mm: f64,
    pub trials: usize,
    pub redraws: usize,
}

/// Normalized targets of a camera-frame pose (unclamped depth).
pub fn normalize(cam: &CameraModel, pose: &[[f64; 3]]) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    let z_root = pose[ROOT][2];
    let mut xy = Vec::with_capacity(pose.len());
    let mut z = Vec::with_capacity(pose.len());
    for p in pose {
        xy.push(cam.project_normalized(*p)?);
        z.push((p[2] - z_root) / DEPTH_RANGE_MM + 0.5);
    }
    Ok((xy, z))
}

struct Trial {
    gt: [[f64; 3]; NUM_JOINTS],
    xy: Vec<[f64; 2]>,
    z: Vec<f64>,
    model_xy: Vec<[f64; 2]>,
    model_z: Vec<f64>,
    n: f64,
}

/// Runs `trials` figures per σ with shared figures and shared unit normal
/// draws across σ. Figures are re-rooted at `cam.z_root`.
pub fn root_noise_experiment(cam: &CameraModel, sigmas: &[f64], trials: usize, seed: u64) -> Result<Vec<RootNoiseRow>> {
    if trials == 0 {
        return Err(arg_err("root_noise_experiment", "zero trials"));
    }
    if sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(arg_err("root_noise_experiment", "negative sigma"));
    }
    let template = FigureTemplate::human();
    let model_noise = Normal::new(0.0, MODEL_ERROR_MM).expect("valid sigma");
    let mut set = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 7, t as u64));
        let mut gt = template.sample_figure(&mut rng);
        let dz = cam.z_root - gt[ROOT][2];
        for p in &mut gt {
            p[2] += dz;
        }
        let (xy, z) = normalize(cam, &gt)?;
        let mut noisy = gt;
        for p in noisy.iter_mut().skip(1) {
            for v in p.iter_mut() {
                *v += model_noise.sample(&mut rng);
            }
        }
        let (model_xy, mut model_z) = normalize(cam, &noisy)?;
        // the model's root depth is relative to the true root
        let shift = (noisy[ROOT][2] - gt[ROOT][2]) / DEPTH_RANGE_MM;
        model_z.iter_mut().for_each(|v| *v += shift);
        set.push(Trial { gt, xy, z, model_xy, model_z, n: rng_normal(&mut rng) });
    }

    sigmas
        .iter()
        .map(|&sigma| {
            let mut inc = 0.0;
            let mut inc_model = 0.0;
            let mut redraws = 0;
            for (t, tr) in set.iter().enumerate() {
                let base = cam.inverse_project(&tr.xy, &tr.z)?;
                let base_model = cam.inverse_project(&tr.model_xy, &tr.model_z)?;
                let mut n = tr.n;
                let mut rng = None;
                let (rec, rec_model) = loop {
                    let c = CameraModel { z_root: cam.z_root + sigma * n, ..*cam };
                    match (c.inverse_project(&tr.xy, &tr.z), c.inverse_project(&tr.model_xy, &tr.model_z)) {
                        (Ok(a), Ok(b)) => break (a, b),
                        _ => {
                            redraws += 1;
                            let r = rng.get_or_insert_with(|| {
                                ChaCha8Rng::seed_from_u64(derive_seed(seed, 8, t as u64))
                            });
                            n = rng_normal(r);
                        }
                    }
                };
                inc += mpjpe(&rec, &base, true)?;
                inc_model += mpjpe(&rec_model, &tr.gt, true)? - mpjpe(&base_model, &tr.gt, true)?;
            }
            let k = trials as f64;
            Ok(RootNoiseRow { sigma_mm: sigma, increase_mm: inc / k, increase_vs_model_mm: inc_model / k, trials, redraws })
        })
        .collect()
}

fn rng_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn rootnoise_csv(rows: &[RootNoiseRow]) -> String {
    let mut out = String::from("sigma_mm,increase_mm,increase_vs_model_mm,trials,redraws\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{:.4},{},{}\n",
            r.sigma_mm, r.increase_mm, r.increase_vs_model_mm, r.trials, r.redraws
        ));
    }
    out
}
