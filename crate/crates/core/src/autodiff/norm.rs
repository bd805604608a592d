//! Per-channel normalization with learnable affine parameters.

use super::{Op, Tape, Var};
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.99;

/// Where normalization statistics come from.
#[derive(Debug, Clone, Copy)]
pub enum NormMode<'a, T> {
    /// Standardize with statistics of the current batch.
    Batch,
    /// Use stored running statistics.
    Frozen { mean: &'a [T], var: &'a [T] },
}

/// Per-channel statistics observed in batch mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BatchStats<T> {
    /// Folds these statistics into running estimates with momentum 0.99.
    pub fn update_running(&self, running_mean: &mut [T], running_var: &mut [T]) {
        let m = T::c(NORM_MOMENTUM);
        let one_m = T::one() - m;
        for (r, &b) in running_mean.iter_mut().zip(&self.mean) {
            *r = m * *r + one_m * b;
        }
        for (r, &b) in running_var.iter_mut().zip(&self.var) {
            *r = m * *r + one_m * b;
        }
    }
}

pub(super) fn backward<T: Scalar>(
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    dy: &[T],
    batch: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let m = xhat.len() / c;
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (xr, gr) in xhat.chunks_exact(c).zip(dy.chunks_exact(c)) {
        for ch in 0..c {
            dgamma[ch] = dgamma[ch] + gr[ch] * xr[ch];
            dbeta[ch] = dbeta[ch] + gr[ch];
        }
    }
    let mut dx = vec![T::zero(); xhat.len()];
    if batch {
        let mf = T::c(m as f64);
        let coef: Vec<T> = (0..c).map(|ch| gamma[ch] * inv_std[ch] / mf).collect();
        for ((dr, xr), gr) in dx.chunks_exact_mut(c).zip(xhat.chunks_exact(c)).zip(dy.chunks_exact(c)) {
            for ch in 0..c {
                dr[ch] = coef[ch] * (mf * gr[ch] - dbeta[ch] - xr[ch] * dgamma[ch]);
            }
        }
    } else {
        let coef: Vec<T> = (0..c).map(|ch| gamma[ch] * inv_std[ch]).collect();
        for (dr, gr) in dx.chunks_exact_mut(c).zip(dy.chunks_exact(c)) {
            for ch in 0..c {
                dr[ch] = coef[ch] * gr[ch];
            }
        }
    }
    (dx, dgamma, dbeta)
}

impl<T: Scalar> Tape<T> {
    /// Channel normalization followed by a per-channel affine map.
    ///
    /// In batch mode the returned [`BatchStats`] hold the statistics used,
    /// for the caller to fold into running estimates.
    pub fn channel_norm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        mode: NormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        self.check(x)?;
        self.check(scale)?;
        self.check(shift)?;
        let xs = self.shape(x).to_vec();
        let c = *xs.last().ok_or_else(|| shape_err("channel_norm", "rank-0 input"))?;
        if self.value(scale).len() != c || self.value(shift).len() != c {
            return Err(shape_err(
                "channel_norm",
                format!(
                    "{c} channels but scale has {} and shift {} entries",
                    self.value(scale).len(),
                    self.value(shift).len()
                ),
            ));
        }
        let xd = self.value(x).data();
        let m = xd.len() / c;
        let eps = T::c(NORM_EPS);
        let (mean, var, stats) = match mode {
            NormMode::Batch => {
                if m < 2 {
                    return Err(arg_err(
                        "channel_norm",
                        "batch statistics over a single element; variance undefined",
                    ));
                }
                let mf = T::c(m as f64);
                let mut mean = vec![T::zero(); c];
                for row in xd.chunks_exact(c) {
                    for ch in 0..c {
                        mean[ch] = mean[ch] + row[ch];
                    }
                }
                mean.iter_mut().for_each(|v| *v = *v / mf);
                let mut var = vec![T::zero(); c];
                for row in xd.chunks_exact(c) {
                    for ch in 0..c {
                        let d = row[ch] - mean[ch];
                        var[ch] = var[ch] + d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v = *v / mf);
                let stats = BatchStats { mean: mean.clone(), var: var.clone() };
                (mean, var, Some(stats))
            }
            NormMode::Frozen { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err("channel_norm", "running statistics length mismatch"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = self.value(scale).data();
        let beta = self.value(shift).data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for ((hr, or), xr) in xhat.chunks_exact_mut(c).zip(out.chunks_exact_mut(c)).zip(xd.chunks_exact(c)) {
            for ch in 0..c {
                hr[ch] = (xr[ch] - mean[ch]) * inv_std[ch];
                or[ch] = gamma[ch] * hr[ch] + beta[ch];
            }
        }
        let batch = stats.is_some();
        let value = Tensor::new(xs, out)?;
        let v = self.push(value, Op::Norm { x, scale, shift, xhat, inv_std, batch });
        Ok((v, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frozen_constant_channel_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::filled([1, 3, 3, 1], 2.5));
        let s = tape.leaf(Tensor::filled([1], 1.0));
        let b = tape.leaf(Tensor::filled([1], 0.0));
        let (y, stats) = tape
            .channel_norm(x, s, b, NormMode::Frozen { mean: &[2.5], var: &[1.0] })
            .unwrap();
        assert!(stats.is_none());
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_scale_gives_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn([2, 3, 3, 2], |_| rng.random_range(-3.0..3.0)));
        let s = tape.leaf(Tensor::filled([2], 0.0));
        let b = tape.leaf(Tensor::from_f64([2], &[0.7, -1.2]).unwrap());
        let (y, _) = tape.channel_norm(x, s, b, NormMode::Batch).unwrap();
        for row in tape.value(y).data().chunks(2) {
            assert_eq!(row, &[0.7, -1.2]);
        }
    }

    #[test]
    fn batch_mode_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn([8, 4, 4, 2], |i| {
            rng.random_range(-1.0..1.0) * if i % 2 == 0 { 5.0 } else { 1.0 } + 3.0
        }));
        let s = tape.leaf(Tensor::filled([2], 1.0));
        let b = tape.leaf(Tensor::filled([2], 0.0));
        let (y, _) = tape.channel_norm(x, s, b, NormMode::Batch).unwrap();
        // independent accumulation, in a different order than the op
        let yd = tape.value(y).data();
        for ch in 0..2 {
            let vals: Vec<f64> = yd.iter().skip(ch).step_by(2).copied().collect();
            let n = vals.len() as f64;
            let mean = vals.iter().rev().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn single_element_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::filled([1, 1, 1, 3], 1.0));
        let s = tape.leaf(Tensor::filled([3], 1.0));
        let b = tape.leaf(Tensor::filled([3], 0.0));
        assert!(tape.channel_norm(x, s, b, NormMode::Batch).is_err());
    }

    #[test]
    fn running_update_momentum() {
        let stats = BatchStats { mean: vec![1.0f64], var: vec![2.0] };
        let (mut m, mut v) = (vec![0.0], vec![1.0]);
        stats.update_running(&mut m, &mut v);
        assert!((m[0] - 0.01).abs() < 1e-15);
        assert!((v[0] - 1.01).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::from_fn([2, 3, 3, 2], |_| rng.random_range(-1.0..1.0));
        let gamma = Tensor::from_f64([2], &[1.3, -0.4]).unwrap();
        let beta = Tensor::from_f64([2], &[0.2, 0.1]).unwrap();
        let w = Tensor::<f64>::from_fn([2, 3, 3, 2], |_| rng.random_range(-1.0..1.0));
        for frozen in [false, true] {
            let (g2, b2, w2) = (gamma.clone(), beta.clone(), w.clone());
            let err = finite_diff_check(
                |t, xv| {
                    let (s, b, wv) = (t.leaf(g2.clone()), t.leaf(b2.clone()), t.leaf(w2.clone()));
                    let mode = if frozen {
                        NormMode::Frozen { mean: &[0.1, -0.2], var: &[0.5, 2.0] }
                    } else {
                        NormMode::Batch
                    };
                    let (y, _) = t.channel_norm(xv, s, b, mode)?;
                    let yw = t.mul(y, wv)?;
                    let yy = t.mul(yw, yw)?;
                    t.sum(yy)
                },
                &x,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "frozen={frozen}: {err}");
        }
        let (x2, b2, w2) = (x.clone(), beta.clone(), w.clone());
        let err = finite_diff_check(
            |t, sv| {
                let (xv, b, wv) = (t.leaf(x2.clone()), t.leaf(b2.clone()), t.leaf(w2.clone()));
                let (y, _) = t.channel_norm(xv, sv, b, NormMode::Batch)?;
                let yw = t.mul(y, wv)?;
                let yy = t.mul(yw, yw)?;
                t.sum(yy)
            },
            &gamma,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "scale: {err}");
    }
}
