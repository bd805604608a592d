use std::collections::BTreeMap;

use crate::arch::{forward_graph, CutPoint, Mode, ModelState};
use crate::autodiff::Tape;
use crate::data::{derive_seed, generate_many, Batch, DataConfig, SyntheticSample};
use crate::error::{Error, Result};
use crate::eval::sweep::{evaluate_outputs, CutMetrics};
use crate::tensor::{Scalar, Tensor};

use super::config::TrainConfig;
use super::loss::total_loss;
use super::optim::RmsProp;

const STREAM_INIT: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_VAL: u64 = 2;

/// One row of the metrics log: one output at one validation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub cut: CutPoint,
    pub lr: f64,
    /// Mean training loss since the previous validation.
    pub train_loss: Option<f64>,
    pub val: CutMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub model: ModelState<T>,
    pub log: Vec<MetricsRow>,
    /// Steps at which the learning rate was divided by 10.
    pub lr_drops: Vec<u64>,
}

impl<T> TrainOutcome<T> {
    /// Final-output 2D error at each validation, in order.
    pub fn final_curve(&self) -> Vec<(u64, f64)> {
        // rows of one validation are in cut order
        let Some(last) = self.log.last().map(|r| r.cut) else {
            return Vec::new();
        };
        self.log.iter().filter(|r| r.cut == last).map(|r| (r.step, r.val.err2d)).collect()
    }
}

pub fn metrics_csv(log: &[MetricsRow]) -> String {
    let mut out = String::from("step,k,l,lr,train_loss,val_err2d,val_mpjpe_mm,val_pck150,val_auc\n");
    for r in log {
        let tl = r.train_loss.map(|v| format!("{v:.8}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{:e},{},{:.8},{:.6},{:.6},{:.6}\n",
            r.step, r.cut.k, r.cut.l, r.lr, tl, r.val.err2d, r.val.mpjpe_mm, r.val.pck150, r.val.auc
        ));
    }
    out
}

/// Held-out validation samples for `cfg` (no augmentation).
pub fn validation_set(cfg: &TrainConfig) -> Result<Vec<SyntheticSample>> {
    let data = DataConfig { augment: false, ..cfg.data.clone() };
    let seeds: Vec<u64> = (0..cfg.schedule.val_samples as u64).map(|i| derive_seed(cfg.seed, STREAM_VAL, i)).collect();
    generate_many(&data, &seeds)
}

/// Training batch `step` of the seeded stream.
pub fn training_batch(cfg: &TrainConfig, step: u64) -> Result<Vec<SyntheticSample>> {
    let b = cfg.schedule.batch_size as u64;
    let seeds: Vec<u64> = (0..b).map(|i| derive_seed(cfg.seed, STREAM_TRAIN, step * b + i)).collect();
    generate_many(&cfg.data, &seeds)
}

/// Initial parameters for `cfg`.
pub fn init_model<T: Scalar>(cfg: &TrainConfig) -> Result<ModelState<T>> {
    ModelState::init(&cfg.network, derive_seed(cfg.seed, STREAM_INIT, 0))
}

/// Result of one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub entry_losses: Vec<(CutPoint, f64)>,
}

/// Forward, backward and RMSprop update on one batch.
pub fn train_step<T: Scalar>(
    model: &mut ModelState<T>,
    opt: &mut RmsProp<T>,
    batch: &Batch<T>,
    lr: f64,
    conf_weight: f64,
) -> Result<StepReport> {
    let mut tape = Tape::new();
    let graph = forward_graph(&mut tape, model, &batch.images, Mode::Train, None)?;
    let (loss, parts) = total_loss(&mut tape, &graph.entries, batch, conf_weight)?;
    let value = tape.value(loss).item().f64();
    let entry_losses: Vec<(CutPoint, f64)> =
        graph.entries.iter().zip(&parts).map(|((c, _), v)| (*c, tape.value(*v).item().f64())).collect();
    if !value.is_finite() {
        let per: Vec<String> = entry_losses.iter().map(|(c, v)| format!("{c}={v}")).collect();
        return Err(Error::NonFinite {
            step: model.step,
            diagnostics: format!("loss={value} lr={lr} entries: {}", per.join(" ")),
        });
    }
    let grads = tape.backward(loss)?;
    let mut by_path = BTreeMap::new();
    for (path, p) in &model.params {
        let g = match graph.params.get(path) {
            Some(&v) => grads.tensor(v),
            None => Tensor::zeros(p.shape().to_vec()),
        };
        by_path.insert(path.clone(), g);
    }
    opt.step(model, &by_path, lr)?;
    model.update_running_stats(&graph.stats)?;
    Ok(StepReport { loss: value, entry_losses })
}

/// Progress notification after each validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    pub step: u64,
    pub lr: f64,
    pub train_loss: Option<f64>,
    pub final_err2d: f64,
}

/// Trains from `model` (or a fresh initialization) on the seeded
/// synthetic stream.
///
/// Validation runs at step 0, every `val_interval` steps and after the
/// last step. The learning rate drops by 10× when the final output's
/// validation 2D error has not improved by more than `min_improvement`
/// (relative) for `patience` consecutive validations, at most
/// `max_lr_drops` times.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    model: Option<ModelState<T>>,
    progress: &mut dyn FnMut(&Progress),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let mut model = match model {
        Some(m) => m,
        None => init_model(cfg)?,
    };
    let s = &cfg.schedule;
    let val = validation_set(cfg)?;
    let mut opt = RmsProp::new();
    let mut lr = s.lr;
    let mut log = Vec::new();
    let mut lr_drops = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut loss_sum = 0.0;
    let mut loss_n = 0u64;

    let mut validate = |model: &ModelState<T>, step: u64, lr: &mut f64, train_loss: Option<f64>, log: &mut Vec<MetricsRow>| {
        let metrics = evaluate_outputs(model, &val)?;
        let final_err = metrics.last().map(|(_, m)| m.err2d).unwrap_or(f64::NAN);
        for (cut, m) in metrics {
            log.push(MetricsRow { step, cut, lr: *lr, train_loss, val: m });
        }
        progress(&Progress { step, lr: *lr, train_loss, final_err2d: final_err });
        if best.is_infinite() || final_err < best * (1.0 - s.min_improvement) {
            best = final_err;
            stale = 0;
        } else {
            stale += 1;
            if stale >= s.patience && lr_drops.len() < s.max_lr_drops {
                *lr /= 10.0;
                lr_drops.push(step);
                stale = 0;
            }
        }
        Ok::<(), Error>(())
    };

    validate(&model, 0, &mut lr, None, &mut log)?;
    for step in 0..s.steps {
        let batch = Batch::<T>::from_samples(&training_batch(cfg, step)?)?;
        let r = train_step(&mut model, &mut opt, &batch, lr, s.conf_weight)?;
        loss_sum += r.loss;
        loss_n += 1;
        let done = step + 1;
        if done % s.val_interval == 0 || done == s.steps {
            let tl = Some(loss_sum / loss_n as f64);
            loss_sum = 0.0;
            loss_n = 0;
            validate(&model, done, &mut lr, tl, &mut log)?;
        }
    }
    drop(validate);
    Ok(TrainOutcome { model, log, lr_drops })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::NetworkConfig;

    fn tiny() -> TrainConfig {
        let mut c = TrainConfig::toy();
        c.network = NetworkConfig {
            pyramids: 2,
            levels: 1,
            features: 8,
            input_h: 32,
            input_w: 32,
            entry_channels: [4, 4, 4, 4, 8, 8, 8],
            ..NetworkConfig::toy()
        };
        c.data.height = 32;
        c.data.width = 32;
        c.schedule.batch_size = 2;
        c.schedule.val_samples = 4;
        c.schedule.val_interval = 3;
        c.schedule.steps = 7;
        c.seed = 5;
        c
    }

    #[test]
    fn zero_steps_returns_init() {
        let mut c = tiny();
        c.schedule.steps = 0;
        let out = train::<f32>(&c, None, &mut |_| {}).unwrap();
        assert_eq!(out.model, init_model::<f32>(&c).unwrap());
        assert_eq!(out.log.len(), c.network.cut_points().len());
    }

    #[test]
    fn log_has_row_per_validation_per_output() {
        let c = tiny();
        let mut seen = Vec::new();
        let out = train::<f32>(&c, None, &mut |p| seen.push(p.step)).unwrap();
        assert_eq!(seen, vec![0, 3, 6, 7]);
        assert_eq!(out.log.len(), 4 * c.network.cut_points().len());
        assert_eq!(out.model.step, 7);
        let csv = metrics_csv(&out.log);
        assert_eq!(csv.lines().count(), out.log.len() + 1);
        assert_eq!(out.final_curve().len(), 4);
    }

    #[test]
    fn runs_are_bit_identical() {
        let c = tiny();
        let a = train::<f32>(&c, None, &mut |_| {}).unwrap();
        let b = train::<f32>(&c, None, &mut |_| {}).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(metrics_csv(&a.log), metrics_csv(&b.log));
    }

    #[test]
    fn plateau_drops_lr_at_most_twice() {
        let mut c = tiny();
        // no validation can count as an improvement
        c.schedule.min_improvement = 1.0;
        c.schedule.val_interval = 1;
        c.schedule.steps = 14;
        c.schedule.patience = 2;
        let out = train::<f32>(&c, None, &mut |_| {}).unwrap();
        assert_eq!(out.lr_drops.len(), 2);
        assert_eq!(out.lr_drops, vec![2, 4]);
        let last = out.log.last().unwrap();
        assert!((last.lr - 1e-5).abs() < 1e-12);
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let c = tiny();
        let mut model = init_model::<f32>(&c).unwrap();
        let key = model.params.keys().find(|k| k.ends_with("pb/wh")).unwrap().clone();
        model.params.get_mut(&key).unwrap().data_mut()[0] = f32::NAN;
        match train::<f32>(&c, Some(model), &mut |_| {}) {
            Err(Error::NonFinite { step: 0, diagnostics }) => assert!(diagnostics.contains("loss=NaN"), "{diagnostics}"),
            other => panic!("{:?}", other.map(|_| ())),
        }
    }
}
