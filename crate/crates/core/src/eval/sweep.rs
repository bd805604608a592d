//! Accuracy, cost and latency for every cut point.

use std::time::Instant;

use crate::arch::{count_flops, forward_cut, forward_full, CutPoint, ModelState};
use crate::data::{Batch, SyntheticSample, NUM_JOINTS};
use crate::error::{arg_err, Result};
use crate::eval::metrics::{error_2d, joint_errors, pck_auc_from_errors};
use crate::par;
use crate::tensor::{Scalar, Tensor};

/// Timing protocol: median of `reps` runs after `warmup` untimed runs,
/// batch 1, one worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyProtocol {
    pub warmup: usize,
    pub reps: usize,
}

impl Default for LatencyProtocol {
    fn default() -> Self {
        Self { warmup: 10, reps: 50 }
    }
}

/// Accuracy of one output over an evaluation set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutMetrics {
    pub mpjpe_mm: f64,
    pub pck150: f64,
    pub auc: f64,
    /// Mean 2D distance over visible joints, normalized image units.
    pub err2d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cut: CutPoint,
    pub metrics: CutMetrics,
    pub flops: u64,
    /// `None` when latency was not measured.
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<SweepRow>,
    pub samples: usize,
    pub protocol: Option<LatencyProtocol>,
}

const EVAL_BATCH: usize = 8;

/// Metrics of every prediction block on `samples`, in cut order.
///
/// Runs the full network once per batch; every truncated network returns
/// bit-identical copies of these entries.
pub fn evaluate_outputs<T: Scalar>(model: &ModelState<T>, samples: &[SyntheticSample]) -> Result<Vec<(CutPoint, CutMetrics)>> {
    if samples.is_empty() {
        return Err(arg_err("evaluate", "empty evaluation set"));
    }
    let cuts = model.config.cut_points();
    let mut errs3: Vec<Vec<f64>> = vec![Vec::new(); cuts.len()];
    let mut sum2 = vec![0.0; cuts.len()];
    let mut n2 = vec![0usize; cuts.len()];
    for chunk in samples.chunks(EVAL_BATCH) {
        let batch = Batch::<T>::from_samples(chunk)?;
        let preds = forward_full(model, &batch.images)?;
        for (ci, (_, p)) in preds.entries.iter().enumerate() {
            let pose = p.pose.data();
            for (bi, s) in chunk.iter().enumerate() {
                let row = &pose[bi * NUM_JOINTS * 3..(bi + 1) * NUM_JOINTS * 3];
                let xy: Vec<[f64; 2]> = row.chunks(3).map(|c| [c[0].f64(), c[1].f64()]).collect();
                let z: Vec<f64> = row.chunks(3).map(|c| c[2].f64()).collect();
                let mm = s.camera.inverse_project(&xy, &z)?;
                errs3[ci].extend(joint_errors(&mm, &s.pose3d, true)?);
                let vis = s.visible.iter().filter(|v| **v).count();
                if let Some(e) = error_2d(&xy, &s.gt_xy, &s.visible) {
                    sum2[ci] += e * vis as f64;
                    n2[ci] += vis;
                }
            }
        }
    }
    Ok(cuts
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let e = &errs3[i];
            let (pck150, auc) = pck_auc_from_errors(e);
            let m = CutMetrics {
                mpjpe_mm: e.iter().sum::<f64>() / e.len() as f64,
                pck150,
                auc,
                err2d: if n2[i] > 0 { sum2[i] / n2[i] as f64 } else { f64::NAN },
            };
            (c, m)
        })
        .collect())
}

/// Median wall-clock milliseconds of `forward_cut` on one image.
pub fn measure_latency<T: Scalar>(model: &ModelState<T>, image: &Tensor<T>, cut: CutPoint, protocol: LatencyProtocol) -> Result<f64> {
    if protocol.reps == 0 {
        return Err(arg_err("measure_latency", "zero repetitions"));
    }
    par::single_threaded(|| {
        for _ in 0..protocol.warmup {
            forward_cut(model, image, cut)?;
        }
        let mut times = Vec::with_capacity(protocol.reps);
        for _ in 0..protocol.reps {
            let t = Instant::now();
            let out = forward_cut(model, image, cut)?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(out);
        }
        times.sort_by(f64::total_cmp);
        let n = times.len();
        Ok(if n % 2 == 1 { times[n / 2] } else { (times[n / 2 - 1] + times[n / 2]) / 2.0 })
    })
}

/// Per-cut accuracy, FLOPs and (optionally) latency.
pub fn anytime_sweep<T: Scalar>(
    model: &ModelState<T>,
    samples: &[SyntheticSample],
    protocol: Option<LatencyProtocol>,
) -> Result<EvalReport> {
    let metrics = evaluate_outputs(model, samples)?;
    let image = Batch::<T>::from_samples(&samples[..1])?.images;
    let rows = metrics
        .into_iter()
        .map(|(cut, m)| {
            let latency_ms = match protocol {
                Some(p) => Some(measure_latency(model, &image, cut, p)?),
                None => None,
            };
            Ok(SweepRow { cut, metrics: m, flops: count_flops(&model.config, cut)?, latency_ms })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { rows, samples: samples.len(), protocol })
}

pub fn sweep_csv(report: &EvalReport) -> String {
    let mut out = String::from("k,l,mpjpe_mm,pck150,auc,err2d,flops,latency_ms,warmup,reps\n");
    let (w, r) = report.protocol.map(|p| (p.warmup.to_string(), p.reps.to_string())).unwrap_or_default();
    for row in &report.rows {
        let m = &row.metrics;
        let lat = row.latency_ms.map(|v| format!("{v:.4}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.6},{},{},{},{}\n",
            row.cut.k, row.cut.l, m.mpjpe_mm, m.pck150, m.auc, m.err2d, row.flops, lat, w, r
        ));
    }
    out
}
