use std::collections::BTreeMap;

use crate::arch::ModelState;
use crate::error::{arg_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const RHO: f64 = 0.9;
pub const EPS: f64 = 1e-8;

/// RMSprop state: one squared-gradient accumulator per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp<T> {
    pub rho: f64,
    pub eps: f64,
    pub acc: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Default for RmsProp<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> RmsProp<T> {
    pub fn new() -> Self {
        Self { rho: RHO, eps: EPS, acc: BTreeMap::new() }
    }

    /// `a ← ρa + (1−ρ)g²; θ ← θ − lr·g/(√a + ε)` for every parameter.
    ///
    /// `grads` must cover exactly the model's parameters. A non-finite
    /// gradient rejects the whole step and leaves the model untouched.
    pub fn step(&mut self, model: &mut ModelState<T>, grads: &BTreeMap<String, Tensor<T>>, lr: f64) -> Result<()> {
        if grads.len() != model.params.len() {
            return Err(arg_err("rmsprop", format!("{} gradients for {} parameters", grads.len(), model.params.len())));
        }
        let mut bad = Vec::new();
        for (path, p) in &model.params {
            let g = grads.get(path).ok_or_else(|| arg_err("rmsprop", format!("missing gradient for {path}")))?;
            if g.shape() != p.shape() {
                return Err(arg_err("rmsprop", format!("{path}: gradient {:?} vs parameter {:?}", g.shape(), p.shape())));
            }
            if !g.all_finite() {
                bad.push(path.clone());
            }
        }
        if !bad.is_empty() {
            return Err(Error::NonFinite { step: model.step, diagnostics: format!("non-finite gradients in {}", bad.join(", ")) });
        }
        let (rho, one_rho, eps, lr) = (T::c(self.rho), T::c(1.0 - self.rho), T::c(self.eps), T::c(lr));
        for (path, p) in model.params.iter_mut() {
            let g = grads[path].data();
            let a = self.acc.entry(path.clone()).or_insert_with(|| vec![T::zero(); g.len()]);
            for ((w, &gi), ai) in p.data_mut().iter_mut().zip(g).zip(a.iter_mut()) {
                *ai = rho * *ai + one_rho * gi * gi;
                *w = *w - lr * gi / (ai.sqrt() + eps);
            }
        }
        model.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::NetworkConfig;

    fn tiny() -> ModelState<f64> {
        let cfg = NetworkConfig {
            pyramids: 1,
            levels: 1,
            features: 8,
            input_h: 32,
            input_w: 32,
            entry_channels: [4, 4, 4, 4, 8, 8, 8],
            ..NetworkConfig::toy()
        };
        ModelState::init(&cfg, 1).unwrap()
    }

    fn grads_like(m: &ModelState<f64>, v: f64) -> BTreeMap<String, Tensor<f64>> {
        m.params.iter().map(|(k, p)| (k.clone(), Tensor::filled(p.shape().to_vec(), v))).collect()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = tiny();
        let before = m.params.clone();
        let mut opt = RmsProp::new();
        for _ in 0..5 {
            let g = grads_like(&m, 0.0);
            opt.step(&mut m, &g, 1e-3).unwrap();
        }
        assert_eq!(m.params, before);
        assert_eq!(m.step, 5);
    }

    #[test]
    fn constant_gradient_update_tends_to_lr() {
        // fixed point of the accumulator is g², so the step is lr·g/(|g|+ε)
        let mut opt = RmsProp::<f64>::new();
        let mut m = tiny();
        let key = m.params.keys().next().unwrap().clone();
        let g = 0.3;
        let mut last = 0.0;
        for _ in 0..300 {
            let before = m.params[&key].data()[0];
            let gr = grads_like(&m, g);
            opt.step(&mut m, &gr, 1e-3).unwrap();
            last = before - m.params[&key].data()[0];
        }
        let want = 1e-3 * g / (g.abs() + EPS);
        assert!((last - want).abs() < 1e-12, "{last} vs {want}");
        // first step is larger: a = 0.1 g²
        let mut opt = RmsProp::<f64>::new();
        let mut m = tiny();
        let before = m.params[&key].data()[0];
        let gr = grads_like(&m, g);
        opt.step(&mut m, &gr, 1e-3).unwrap();
        let first = before - m.params[&key].data()[0];
        assert!((first - 1e-3 * g / ((0.1f64).sqrt() * g + EPS)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_rejected_without_advancing() {
        let mut m = tiny();
        let before = m.clone();
        let mut opt = RmsProp::new();
        let mut g = grads_like(&m, 0.1);
        let k = g.keys().nth(3).unwrap().clone();
        g.get_mut(&k).unwrap().data_mut()[0] = f64::NAN;
        match opt.step(&mut m, &g, 1e-3) {
            Err(Error::NonFinite { step: 0, diagnostics }) => assert!(diagnostics.contains(&k)),
            other => panic!("{other:?}"),
        }
        assert_eq!(m, before);
        assert!(opt.acc.is_empty());
        g.remove(&k);
        assert!(opt.step(&mut m, &g, 1e-3).is_err());
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut m = tiny();
            let mut opt = RmsProp::new();
            for i in 0..10 {
                let g = grads_like(&m, (i as f64 * 0.37).sin());
                opt.step(&mut m, &g, 1e-2).unwrap();
            }
            m
        };
        assert_eq!(run(), run());
    }
}
