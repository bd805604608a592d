//! Argmax quantization floor versus soft-argmax regression on coarse grids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::camera::DEPTH_RANGE_MM;
use crate::data::derive_seed;
use crate::error::{arg_err, Result};
use crate::heads::{depth_attention_plane, soft_argmax_plane, Ramps};
use crate::par;

/// Mean distance from a uniform point of the unit cube to its centre.
pub const UNIT_CUBE_MEAN_NORM: f64 = 0.480296;

/// Side of the cube joints are drawn from (mm).
pub const CUBE_MM: f64 = DEPTH_RANGE_MM;

/// Blob width in cells for the soft-argmax column.
pub const BLOB_SIGMA_CELLS: f64 = 0.75;
/// Per-axis regression noise (mm) standing in for model error.
pub const BLOB_NOISE_MM: f64 = 30.0;
/// Blob-suite joints keep this many cells from the grid border.
pub const BLOB_MARGIN_CELLS: f64 = 1.5;

pub const MIN_SAMPLES: usize = 100_000;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantRow {
    pub s: usize,
    pub argmax_mm: f64,
    pub analytic_mm: f64,
    pub softargmax_mm: f64,
    /// Argmax error on the blob suite (restricted to the inner region).
    pub blob_argmax_mm: f64,
}

pub fn analytic_argmax_mm(s: usize) -> f64 {
    UNIT_CUBE_MEAN_NORM * CUBE_MM / s as f64
}

/// Nearest of `s` cell centres on `[0, CUBE_MM)`.
pub fn snap(v: f64, s: usize) -> f64 {
    let cell = CUBE_MM / s as f64;
    let i = ((v / cell).floor() as i64).clamp(0, s as i64 - 1);
    (i as f64 + 0.5) * cell
}

fn norm3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

// sums over chunks, each with its own derived stream, reduced in order
fn chunked_mean<F>(samples: usize, seed: u64, stream: u64, f: F) -> f64
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync + Send,
{
    let chunks = samples.div_ceil(CHUNK);
    let sums = par::map_collect(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, c as u64));
        let n = CHUNK.min(samples - c * CHUNK);
        (0..n).map(|_| f(&mut rng)).sum::<f64>()
    });
    sums.iter().sum::<f64>() / samples as f64
}

/// Monte-Carlo argmax error: uniform joints in the cube, each coordinate
/// snapped to its cell centre.
pub fn argmax_error_mc(s: usize, samples: usize, seed: u64) -> f64 {
    chunked_mean(samples, seed, s as u64, |rng| {
        let p: [f64; 3] = [rng.random_range(0.0..CUBE_MM), rng.random_range(0.0..CUBE_MM), rng.random_range(0.0..CUBE_MM)];
        norm3(p, p.map(|v| snap(v, s)))
    })
}

/// Gaussian-blob heatmap logits on an `s × s` grid, centred at normalized
/// `(mx, my)` with width `sigma` cells.
pub fn blob_logits(s: usize, mx: f64, my: f64, sigma: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(s * s);
    for i in 0..s {
        let dy = (i as f64 + 0.5) - my * s as f64;
        for j in 0..s {
            let dx = (j as f64 + 0.5) - mx * s as f64;
            h.push(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        }
    }
    h
}

/// Blob suite at resolution `s`: `(argmax_mm, softargmax_mm)`.
///
/// Truth is drawn uniformly at least [`BLOB_MARGIN_CELLS`] from the border.
/// Argmax reads the ground-truth blob. Soft-argmax reads a predicted blob
/// centred at the truth plus [`BLOB_NOISE_MM`] Gaussian error per axis,
/// with depth from a depth map filled with the predicted depth.
pub fn blob_suite(s: usize, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let ramps = Ramps::<f64>::new(s, s)?;
    let margin = BLOB_MARGIN_CELLS / s as f64;
    if margin >= 0.5 {
        return Err(arg_err("blob_suite", format!("s={s} too small for the border margin")));
    }
    let noise = Normal::new(0.0, BLOB_NOISE_MM / CUBE_MM).expect("valid sigma");
    let errs = |pick_soft: bool| {
        chunked_mean(samples, seed, 1000 + s as u64, |rng| {
            let t: [f64; 3] = [
                rng.random_range(margin..1.0 - margin),
                rng.random_range(margin..1.0 - margin),
                rng.random_range(margin..1.0 - margin),
            ];
            let e = [noise.sample(rng), noise.sample(rng), noise.sample(rng)];
            let got = if pick_soft {
                let p = [t[0] + e[0], t[1] + e[1], t[2] + e[2]];
                let h = blob_logits(s, p[0], p[1], BLOB_SIGMA_CELLS);
                let (x, y) = soft_argmax_plane(&h, &ramps);
                let z = depth_attention_plane(&h, &vec![p[2]; s * s]);
                [x, y, z]
            } else {
                let h = blob_logits(s, t[0], t[1], BLOB_SIGMA_CELLS);
                let (x, y) = crate::heads::argmax_plane(&h, s, s);
                // depth bins quantize the same way
                [x, y, snap(t[2] * CUBE_MM, s) / CUBE_MM]
            };
            norm3(got, t) * CUBE_MM
        })
    };
    Ok((errs(false), errs(true)))
}

/// One row per resolution.
pub fn quantization_study(resolutions: &[usize], samples: usize, seed: u64) -> Result<Vec<QuantRow>> {
    if samples < MIN_SAMPLES {
        return Err(arg_err("quantization_study", format!("need at least {MIN_SAMPLES} samples, got {samples}")));
    }
    resolutions
        .iter()
        .map(|&s| {
            if s == 0 {
                return Err(arg_err("quantization_study", "resolution 0"));
            }
            let (blob_argmax_mm, softargmax_mm) = blob_suite(s, samples, seed)?;
            Ok(QuantRow {
                s,
                argmax_mm: argmax_error_mc(s, samples, seed),
                analytic_mm: analytic_argmax_mm(s),
                softargmax_mm,
                blob_argmax_mm,
            })
        })
        .collect()
}

pub fn quant_csv(rows: &[QuantRow]) -> String {
    let mut out = String::from("s,argmax_mm,softargmax_mm\n");
    for r in rows {
        out.push_str(&format!("{},{:.4},{:.4}\n", r.s, r.argmax_mm, r.softargmax_mm));
    }
    out
}
