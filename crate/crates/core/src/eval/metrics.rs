use crate::error::{arg_err, Result};

/// PCK threshold grid in millimeters: 0, 5, ..., 150.
pub fn pck_thresholds() -> Vec<f64> {
    (0..=30).map(|i| i as f64 * 5.0).collect()
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Per-joint Euclidean errors. With `align_root`, both poses are shifted so
/// joint 0 sits at the origin and joint 0 is dropped.
pub fn joint_errors(pred: &[[f64; 3]], gt: &[[f64; 3]], align_root: bool) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(arg_err("mpjpe", format!("{} predicted vs {} ground-truth joints", pred.len(), gt.len())));
    }
    if !align_root {
        return Ok(pred.iter().zip(gt).map(|(p, g)| dist(*p, *g)).collect());
    }
    if pred.len() < 2 {
        return Err(arg_err("mpjpe", "root alignment needs at least two joints"));
    }
    let (pr, gr) = (pred[0], gt[0]);
    Ok(pred[1..]
        .iter()
        .zip(&gt[1..])
        .map(|(p, g)| {
            let a = [p[0] - pr[0], p[1] - pr[1], p[2] - pr[2]];
            let b = [g[0] - gr[0], g[1] - gr[1], g[2] - gr[2]];
            dist(a, b)
        })
        .collect())
}

/// Mean per-joint position error.
pub fn mpjpe(pred: &[[f64; 3]], gt: &[[f64; 3]], align_root: bool) -> Result<f64> {
    let e = joint_errors(pred, gt, align_root)?;
    if e.is_empty() {
        return Err(arg_err("mpjpe", "no joints"));
    }
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// `(PCK@150, AUC)` from per-joint errors.
///
/// A joint counts as correct at threshold `t` when its error is below `t`;
/// an exact hit also counts at `t = 0`.
pub fn pck_auc_from_errors(errors: &[f64]) -> (f64, f64) {
    if errors.is_empty() {
        return (0.0, 0.0);
    }
    let n = errors.len() as f64;
    let pck = |t: f64| errors.iter().filter(|&&e| e < t || e == 0.0).count() as f64 / n;
    let grid = pck_thresholds();
    let auc = grid.iter().map(|&t| pck(t)).sum::<f64>() / grid.len() as f64;
    (pck(150.0), auc)
}

/// `(PCK@150, AUC)` for root-aligned poses.
pub fn pck_auc(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<(f64, f64)> {
    Ok(pck_auc_from_errors(&joint_errors(pred, gt, true)?))
}

/// Mean 2D distance between normalized coordinates, over `mask`ed joints.
/// Returns `None` when nothing is masked in.
pub fn error_2d(pred: &[[f64; 2]], gt: &[[f64; 2]], mask: &[bool]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, g), &m) in pred.iter().zip(gt).zip(mask) {
        if m {
            sum += ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}
