//! Plain-text `key=value` configuration shared by training and the CLI.

use std::path::Path;

use crate::arch::NetworkConfig;
use crate::data::DataConfig;
use crate::error::{io_err, Error, Result};
use crate::tensor::DType;

/// Optimization schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Validate every this many steps (and at step 0 and the last step).
    pub val_interval: u64,
    pub val_samples: usize,
    /// Validations without sufficient improvement before the lr drops.
    pub patience: usize,
    /// Relative improvement that counts, e.g. 0.005 for 0.5%.
    pub min_improvement: f64,
    pub max_lr_drops: usize,
    /// Weight of the confidence term relative to the pose term.
    pub conf_weight: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            lr: 1e-3,
            val_interval: 100,
            val_samples: 64,
            patience: 5,
            min_improvement: 0.005,
            max_lr_drops: 2,
            conf_weight: 1.0,
        }
    }
}

/// Everything a training run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub schedule: Schedule,
    pub data: DataConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy()
    }
}

pub const KEYS: &[&str] = &[
    "pyramids",
    "levels",
    "joints",
    "features",
    "input_h",
    "input_w",
    "entry_channels",
    "precision",
    "steps",
    "batch_size",
    "lr",
    "val_interval",
    "val_samples",
    "patience",
    "min_improvement",
    "max_lr_drops",
    "conf_weight",
    "two_d_fraction",
    "augment",
    "max_rotation_deg",
    "scale_min",
    "scale_max",
    "gain_min",
    "gain_max",
    "seed",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value for {key}: {v:?}")))
}

impl TrainConfig {
    pub fn toy() -> Self {
        let network = NetworkConfig::toy();
        let data = DataConfig::new(network.input_h, network.input_w);
        Self { network, schedule: Schedule::default(), data, seed: 0 }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let n = &mut self.network;
        let s = &mut self.schedule;
        let d = &mut self.data;
        match key.trim() {
            "pyramids" => n.pyramids = num(key, v)?,
            "levels" => n.levels = num(key, v)?,
            "joints" => n.joints = num(key, v)?,
            "features" => n.features = num(key, v)?,
            "input_h" => n.input_h = num(key, v)?,
            "input_w" => n.input_w = num(key, v)?,
            "entry_channels" => {
                let parts: Vec<usize> = v.split(',').map(|p| num(key, p.trim())).collect::<Result<_>>()?;
                n.entry_channels = parts
                    .try_into()
                    .map_err(|p: Vec<usize>| Error::Config(format!("entry_channels needs 7 widths, got {}", p.len())))?;
            }
            "precision" => {
                n.precision = DType::from_code(v).ok_or_else(|| Error::Config(format!("bad precision {v:?}")))?
            }
            "steps" => s.steps = num(key, v)?,
            "batch_size" => s.batch_size = num(key, v)?,
            "lr" => s.lr = num(key, v)?,
            "val_interval" => s.val_interval = num(key, v)?,
            "val_samples" => s.val_samples = num(key, v)?,
            "patience" => s.patience = num(key, v)?,
            "min_improvement" => s.min_improvement = num(key, v)?,
            "max_lr_drops" => s.max_lr_drops = num(key, v)?,
            "conf_weight" => s.conf_weight = num(key, v)?,
            "two_d_fraction" => d.two_d_fraction = num(key, v)?,
            "augment" => d.augment = num(key, v)?,
            "max_rotation_deg" => d.ranges.max_rotation_deg = num(key, v)?,
            "scale_min" => d.ranges.scale.0 = num(key, v)?,
            "scale_max" => d.ranges.scale.1 = num(key, v)?,
            "gain_min" => d.ranges.gain.0 = num(key, v)?,
            "gain_max" => d.ranges.gain.1 = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            other => return Err(Error::UnknownKey(other.to_string())),
        }
        d.height = n.input_h;
        d.width = n.input_w;
        Ok(())
    }

    /// Applies a `key=value` override such as a `--set` argument.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got {pair:?}")))?;
        self.set(k, v)
    }

    /// Parses a config file body on top of the toy defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::toy();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", i + 1)))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.network.joints != crate::data::NUM_JOINTS {
            return Err(Error::Config(format!(
                "synthetic data has {} joints, network has {}",
                crate::data::NUM_JOINTS,
                self.network.joints
            )));
        }
        self.data.validate().map_err(|e| Error::Config(e.to_string()))?;
        let s = &self.schedule;
        if s.batch_size == 0 || s.val_interval == 0 || s.val_samples == 0 {
            return Err(Error::Config("batch_size, val_interval and val_samples must be >= 1".into()));
        }
        if !(s.conf_weight >= 0.0 && s.conf_weight.is_finite()) {
            return Err(Error::Config(format!("conf_weight must be >= 0, got {}", s.conf_weight)));
        }
        if !(s.lr > 0.0 && s.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", s.lr)));
        }
        Ok(())
    }

    /// Serializes every key; [`TrainConfig::parse`] reads it back.
    pub fn to_text(&self) -> String {
        let n = &self.network;
        let s = &self.schedule;
        let d = &self.data;
        let ec: Vec<String> = n.entry_channels.iter().map(|c| c.to_string()).collect();
        let vals: Vec<String> = vec![
            n.pyramids.to_string(),
            n.levels.to_string(),
            n.joints.to_string(),
            n.features.to_string(),
            n.input_h.to_string(),
            n.input_w.to_string(),
            ec.join(","),
            n.precision.code().to_string(),
            s.steps.to_string(),
            s.batch_size.to_string(),
            format!("{:?}", s.lr),
            s.val_interval.to_string(),
            s.val_samples.to_string(),
            s.patience.to_string(),
            format!("{:?}", s.min_improvement),
            s.max_lr_drops.to_string(),
            format!("{:?}", s.conf_weight),
            format!("{:?}", d.two_d_fraction),
            d.augment.to_string(),
            format!("{:?}", d.ranges.max_rotation_deg),
            format!("{:?}", d.ranges.scale.0),
            format!("{:?}", d.ranges.scale.1),
            format!("{:?}", d.ranges.gain.0),
            format!("{:?}", d.ranges.gain.1),
            self.seed.to_string(),
        ];
        KEYS.iter().zip(vals).map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
