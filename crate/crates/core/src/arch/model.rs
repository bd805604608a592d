use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::NetworkConfig;
use crate::autodiff::BatchStats;
use crate::error::{arg_err, Result};
use crate::tensor::{Scalar, Tensor};

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    HeUniform { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Residual stages of the entry flow as `(input, 1×1 width, 3×3 width)`.
pub(crate) fn entry_stages(cfg: &NetworkConfig) -> [(usize, usize, usize); 5] {
    let [c0, a1, b1, a2, b2, a3, b3] = cfg.entry_channels;
    [(c0, a1, b1), (b1, a2, b2), (b2, a2, b2), (b2, a3, b3), (b3, a3, b3)]
}

pub(crate) fn block_prefix(k: usize, l: usize) -> String {
    format!("pyr{k:02}/lvl{l}")
}

struct SpecList(Vec<ParamSpec>);

impl SpecList {
    fn push(&mut self, path: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { path, shape, init });
    }

    fn conv(&mut self, path: String, k: usize, cin: usize, cout: usize) {
        self.push(path, vec![k, k, cin, cout], Init::HeUniform { fan_in: k * k * cin });
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}/norm/scale"), vec![c], Init::Ones);
        self.push(format!("{prefix}/norm/shift"), vec![c], Init::Zeros);
    }

    fn separable(&mut self, prefix: &str, cin: usize, cout: usize) {
        self.push(format!("{prefix}/dw"), vec![3, 3, cin], Init::HeUniform { fan_in: 9 });
        self.conv(format!("{prefix}/pw"), 1, cin, cout);
    }
}

/// Every learnable parameter of the network, in lexicographic path order.
pub fn param_specs(cfg: &NetworkConfig) -> Vec<ParamSpec> {
    let mut s = SpecList(Vec::new());
    let c0 = cfg.entry_channels[0];
    s.conv("entry/stem/w".into(), 7, 3, c0);
    s.norm("entry/stem", c0);
    for (i, (cin, a, b)) in entry_stages(cfg).into_iter().enumerate() {
        let p = format!("entry/res{}", i + 1);
        s.conv(format!("{p}/a/w"), 1, cin, a);
        s.norm(&format!("{p}/a"), a);
        s.conv(format!("{p}/b/w"), 3, a, b);
        s.norm(&format!("{p}/b"), b);
        if cin != b {
            s.conv(format!("{p}/proj/w"), 1, cin, b);
        }
    }
    let (nf, n) = (cfg.features, cfg.joints);
    for cut in cfg.cut_points() {
        let base = block_prefix(cut.k, cut.l);
        let unit = format!("{base}/{}", if cut.k % 2 == 1 { "du" } else { "uu" });
        s.separable(&format!("{unit}/sr"), nf, nf);
        s.norm(&format!("{unit}/sr"), nf);
        if cut.k >= 2 {
            s.conv(format!("{unit}/skip/w"), 1, nf, nf);
        }
        let pb = format!("{base}/pb");
        s.separable(&format!("{pb}/sc"), nf, nf);
        s.norm(&pb, nf);
        s.conv(format!("{pb}/wh"), 1, nf, n);
        s.conv(format!("{pb}/wd"), 1, nf, n);
        s.push(format!("{pb}/wr"), vec![1, 1, n, nf], Init::Zeros);
        s.push(format!("{pb}/ws"), vec![1, 1, n, nf], Init::Zeros);
    }
    let mut v = s.0;
    v.sort_by(|a, b| a.path.cmp(&b.path));
    v
}

/// Running-statistic buffers `(path, channels)` for every normalization.
pub fn buffer_specs(cfg: &NetworkConfig) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for p in param_specs(cfg) {
        if let Some(prefix) = p.path.strip_suffix("/norm/scale") {
            out.push((format!("{prefix}/norm/mean"), p.shape[0]));
            out.push((format!("{prefix}/norm/var"), p.shape[0]));
        }
    }
    out.sort();
    out
}

/// All learnable parameters and running statistics of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub config: NetworkConfig,
    pub params: BTreeMap<String, Tensor<T>>,
    pub buffers: BTreeMap<String, Tensor<T>>,
    /// Optimizer steps taken.
    pub step: u64,
}

impl<T: Scalar> ModelState<T> {
    /// Fresh parameters drawn from `seed`.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for spec in param_specs(config) {
            let t = match spec.init {
                Init::HeUniform { fan_in } => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    Tensor::from_fn(spec.shape, |_| T::c(rng.random_range(-bound..bound)))
                }
                Init::Ones => Tensor::filled(spec.shape, T::one()),
                Init::Zeros => Tensor::zeros(spec.shape),
            };
            params.insert(spec.path, t);
        }
        let mut buffers = BTreeMap::new();
        for (path, c) in buffer_specs(config) {
            let fill = if path.ends_with("/var") { T::one() } else { T::zero() };
            buffers.insert(path, Tensor::filled([c], fill));
        }
        Ok(Self { config: config.clone(), params, buffers, step: 0 })
    }

    pub fn param(&self, path: &str) -> Result<&Tensor<T>> {
        self.params.get(path).ok_or_else(|| arg_err("model", format!("missing parameter {path}")))
    }

    pub fn buffer(&self, path: &str) -> Result<&Tensor<T>> {
        self.buffers.get(path).ok_or_else(|| arg_err("model", format!("missing buffer {path}")))
    }

    /// Total number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Folds batch statistics collected during a training forward pass into
    /// the running buffers. `stats` holds `(norm prefix, statistics)`.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats<T>)]) -> Result<()> {
        for (prefix, st) in stats {
            let mean_key = format!("{prefix}/norm/mean");
            let var_key = format!("{prefix}/norm/var");
            let mut mean = self.buffer(&mean_key)?.clone();
            let mut var = self.buffer(&var_key)?.clone();
            st.update_running(mean.data_mut(), var.data_mut());
            self.buffers.insert(mean_key, mean);
            self.buffers.insert(var_key, var);
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        ModelState {
            config: self.config.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            step: self.step,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_unique_and_sorted() {
        for cfg in [NetworkConfig::toy(), NetworkConfig::paper()] {
            let specs = param_specs(&cfg);
            for w in specs.windows(2) {
                assert!(w[0].path < w[1].path, "{} !< {}", w[0].path, w[1].path);
            }
        }
    }

    #[test]
    fn init_is_seeded() {
        let cfg = NetworkConfig { pyramids: 2, ..NetworkConfig::toy() };
        let a = ModelState::<f32>::init(&cfg, 3).unwrap();
        let b = ModelState::<f32>::init(&cfg, 3).unwrap();
        let c = ModelState::<f32>::init(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
        assert!(a.param("pyr01/lvl1/pb/wr").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(a.param("pyr02/lvl0/uu/skip/w").is_ok());
        assert!(a.param("pyr01/lvl1/du/skip/w").is_err());
        let bound = (6.0f32 / 147.0).sqrt();
        assert!(a.param("entry/stem/w").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert_eq!(a.buffers.len(), 2 * a.params.keys().filter(|k| k.ends_with("/norm/scale")).count());
    }

    #[test]
    fn paper_preset_block_layout() {
        let cfg = NetworkConfig::paper();
        let specs = param_specs(&cfg);
        let wh = specs.iter().find(|s| s.path == "pyr08/lvl0/pb/wh").unwrap();
        assert_eq!(wh.shape, vec![1, 1, 384, 17]);
        let wr = specs.iter().find(|s| s.path == "pyr03/lvl3/pb/wr").unwrap();
        assert_eq!(wr.shape, vec![1, 1, 17, 384]);
        // 64 → 128 needs a projection, 128 → 128 does not
        assert!(specs.iter().any(|s| s.path == "entry/res1/proj/w"));
        assert!(!specs.iter().any(|s| s.path == "entry/res3/proj/w"));
    }
}
