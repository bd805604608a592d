use std::collections::{BTreeMap, HashMap};

use super::config::CutPoint;
use super::model::{block_prefix, entry_stages, ModelState};
use crate::autodiff::{BatchStats, NormMode, Padding, PoolKind, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Where normalization statistics come from during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; collected for the running buffers.
    Train,
    /// Stored running statistics.
    Infer,
}

/// Tape handles of one prediction block's outputs.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub h: Var,
    pub d: Var,
    pub features: Var,
    pub pose: Var,
    pub conf: Var,
}

/// Recorded forward pass.
pub struct Graph<T> {
    pub input: Var,
    pub entries: Vec<(CutPoint, BlockVars)>,
    /// Parameter leaves by path, for reading gradients.
    pub params: BTreeMap<String, Var>,
    /// Batch statistics per normalization prefix (train mode only).
    pub stats: Vec<(String, BatchStats<T>)>,
}

/// Concrete outputs of one prediction block.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    /// `B × H_s × W_s × N` heatmaps.
    pub h: Tensor<T>,
    /// `B × H_s × W_s × N` depth maps in `(0, 1)`.
    pub d: Tensor<T>,
    /// `B × N × 3` normalized `(x, y, z)`.
    pub pose: Tensor<T>,
    /// `B × N × 1`.
    pub conf: Tensor<T>,
}

/// Prediction blocks in execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet<T> {
    pub entries: Vec<(CutPoint, Prediction<T>)>,
}

impl<T> PredictionSet<T> {
    pub fn get(&self, cut: CutPoint) -> Option<&Prediction<T>> {
        self.entries.iter().find(|(c, _)| *c == cut).map(|(_, p)| p)
    }

    pub fn last(&self) -> Option<&(CutPoint, Prediction<T>)> {
        self.entries.last()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Emits the network's building blocks onto a tape, reading parameters from
/// a [`ModelState`].
pub struct GraphBuilder<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    model: &'a ModelState<T>,
    mode: Mode,
    params: BTreeMap<String, Var>,
    stats: Vec<(String, BatchStats<T>)>,
}

impl<'a, T: Scalar> GraphBuilder<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, model: &'a ModelState<T>, mode: Mode) -> Self {
        Self { tape, model, mode, params: BTreeMap::new(), stats: Vec::new() }
    }

    /// Parameter leaf for `path`, created on first use.
    pub fn param(&mut self, path: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(path) {
            return Ok(v);
        }
        let v = self.tape.leaf(self.model.param(path)?.clone());
        self.params.insert(path.to_string(), v);
        Ok(v)
    }

    pub fn into_parts(self) -> (BTreeMap<String, Var>, Vec<(String, BatchStats<T>)>) {
        (self.params, self.stats)
    }

    fn conv(&mut self, x: Var, path: &str, stride: usize) -> Result<Var> {
        let w = self.param(path)?;
        self.tape.conv2d(x, w, stride, Padding::Same)
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let scale = self.param(&format!("{prefix}/norm/scale"))?;
        let shift = self.param(&format!("{prefix}/norm/shift"))?;
        match self.mode {
            Mode::Train => {
                let (y, st) = self.tape.channel_norm(x, scale, shift, NormMode::Batch)?;
                if let Some(st) = st {
                    self.stats.push((prefix.to_string(), st));
                }
                Ok(y)
            }
            Mode::Infer => {
                let model = self.model;
                let mean = model.buffer(&format!("{prefix}/norm/mean"))?.data();
                let var = model.buffer(&format!("{prefix}/norm/var"))?.data();
                let (y, _) = self.tape.channel_norm(x, scale, shift, NormMode::Frozen { mean, var })?;
                Ok(y)
            }
        }
    }

    fn conv_norm_relu(&mut self, x: Var, prefix: &str, stride: usize) -> Result<Var> {
        let c = self.conv(x, &format!("{prefix}/w"), stride)?;
        let n = self.norm(c, prefix)?;
        self.tape.relu(n)
    }

    fn project_if_present(&mut self, x: Var, path: &str) -> Result<Var> {
        if self.model.params.contains_key(path) {
            self.conv(x, path, 1)
        } else {
            Ok(x)
        }
    }

    fn residual_pair(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let a = self.conv_norm_relu(x, &format!("{prefix}/a"), 1)?;
        let b = self.conv_norm_relu(a, &format!("{prefix}/b"), 1)?;
        let skip = self.project_if_present(x, &format!("{prefix}/proj/w"))?;
        self.tape.add(skip, b)
    }

    /// Stem convolution, residual stages and pooling; output is 1/8 of the
    /// input extent with `features` channels.
    pub fn entry_flow(&mut self, image: Var) -> Result<Var> {
        let cfg = &self.model.config;
        let s = self.tape.shape(image).to_vec();
        if s.len() != 4 || s[1] != cfg.input_h || s[2] != cfg.input_w || s[3] != 3 {
            return Err(shape_err(
                "entry_flow",
                format!("image {:?} does not match configured B×{}×{}×3", s, cfg.input_h, cfg.input_w),
            ));
        }
        let n_stages = entry_stages(cfg).len();
        let mut x = self.conv_norm_relu(image, "entry/stem", 2)?;
        for i in 1..=n_stages {
            x = self.residual_pair(x, &format!("entry/res{i}"))?;
            match i {
                1 => x = self.tape.pool2d(x, PoolKind::Max, 3, 2, Padding::Same)?,
                3 => x = self.tape.pool2d(x, PoolKind::Max, 2, 2, Padding::Same)?,
                _ => {}
            }
        }
        Ok(x)
    }

    /// `x + ReLU(norm(SC(x)))`, with a 1×1 projection on the skip path when
    /// `prefix/proj/w` exists.
    pub fn separable_residual(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let dw = self.param(&format!("{prefix}/dw"))?;
        let pw = self.param(&format!("{prefix}/pw"))?;
        let s = self.tape.separable_conv2d(x, dw, pw)?;
        let n = self.norm(s, prefix)?;
        let y = self.tape.relu(n)?;
        let skip = self.project_if_present(x, &format!("{prefix}/proj/w"))?;
        self.tape.add(skip, y)
    }

    fn add_skip(&mut self, r: Var, skip: Option<Var>, prefix: &str) -> Result<Var> {
        let Some(skip) = skip else { return Ok(r) };
        if self.tape.shape(skip)[..3] != self.tape.shape(r)[..3] {
            return Err(shape_err(
                "pyramid unit",
                format!("skip {:?} does not match level extent {:?}", self.tape.shape(skip), self.tape.shape(r)),
            ));
        }
        let p = self.conv(skip, &format!("{prefix}/skip/w"), 1)?;
        self.tape.add(r, p)
    }

    /// Max-pool 2×2/2, separable residual, then the projected skip if any.
    pub fn downscaling_unit(&mut self, above: Var, skip: Option<Var>, prefix: &str) -> Result<Var> {
        let p = self.tape.pool2d(above, PoolKind::Max, 2, 2, Padding::Same)?;
        let r = self.separable_residual(p, &format!("{prefix}/sr"))?;
        self.add_skip(r, skip, prefix)
    }

    /// Nearest 2× upsampling, separable residual, then the projected skip.
    pub fn upscaling_unit(&mut self, below: Var, skip: Option<Var>, prefix: &str) -> Result<Var> {
        let u = self.tape.upsample2x(below)?;
        let r = self.separable_residual(u, &format!("{prefix}/sr"))?;
        self.add_skip(r, skip, prefix)
    }

    /// Heatmaps, depth maps and re-injected features from `x`.
    pub fn prediction_block(&mut self, x: Var, prefix: &str) -> Result<BlockVars> {
        let dw = self.param(&format!("{prefix}/sc/dw"))?;
        let pw = self.param(&format!("{prefix}/sc/pw"))?;
        let s = self.tape.separable_conv2d(x, dw, pw)?;
        let n = self.norm(s, prefix)?;
        let y = self.tape.relu(n)?;
        let h = self.conv(y, &format!("{prefix}/wh"), 1)?;
        let dl = self.conv(y, &format!("{prefix}/wd"), 1)?;
        let d = self.tape.sigmoid(dl)?;
        let rh = self.conv(h, &format!("{prefix}/wr"), 1)?;
        let rd = self.conv(d, &format!("{prefix}/ws"), 1)?;
        let f = self.tape.add(x, y)?;
        let f = self.tape.add(f, rh)?;
        let features = self.tape.add(f, rd)?;
        let (pose, conf) = self.tape.assemble_predictions(h, d)?;
        Ok(BlockVars { h, d, features, pose, conf })
    }
}

/// Records the network on `tape` up to and including `cut` (or every block
/// when `None`).
pub fn forward_graph<T: Scalar>(
    tape: &mut Tape<T>,
    model: &ModelState<T>,
    image: &Tensor<T>,
    mode: Mode,
    cut: Option<CutPoint>,
) -> Result<Graph<T>> {
    let cfg = &model.config;
    let stop = match cut {
        Some(c) => cfg.cut_position(c)?,
        None => cfg.cut_points().len() - 1,
    };
    let input = tape.leaf(image.clone());
    let mut b = GraphBuilder::new(tape, model, mode);
    let entry = b.entry_flow(input)?;
    // most recent feature map produced at each level
    let mut latest: HashMap<usize, Var> = HashMap::from([(0, entry)]);
    let mut entries = Vec::new();
    for cp in cfg.cut_points().into_iter().take(stop + 1) {
        let base = block_prefix(cp.k, cp.l);
        let skip = if cp.k >= 2 { latest.get(&cp.l).copied() } else { None };
        let x = if cp.k % 2 == 1 {
            b.downscaling_unit(latest[&(cp.l - 1)], skip, &format!("{base}/du"))?
        } else {
            b.upscaling_unit(latest[&(cp.l + 1)], skip, &format!("{base}/uu"))?
        };
        let out = b.prediction_block(x, &format!("{base}/pb"))?;
        latest.insert(cp.l, out.features);
        entries.push((cp, out));
    }
    let (params, stats) = b.into_parts();
    Ok(Graph { input, entries, params, stats })
}

fn collect<T: Scalar>(tape: &Tape<T>, g: &Graph<T>) -> PredictionSet<T> {
    let entries = g
        .entries
        .iter()
        .map(|(c, v)| {
            let p = Prediction {
                h: tape.value(v.h).clone(),
                d: tape.value(v.d).clone(),
                pose: tape.value(v.pose).clone(),
                conf: tape.value(v.conf).clone(),
            };
            (*c, p)
        })
        .collect();
    PredictionSet { entries }
}

/// Inference over every prediction block.
pub fn forward_full<T: Scalar>(model: &ModelState<T>, image: &Tensor<T>) -> Result<PredictionSet<T>> {
    let mut tape = Tape::new();
    let g = forward_graph(&mut tape, model, image, Mode::Infer, None)?;
    Ok(collect(&tape, &g))
}

/// Inference that stops after block `cut`.
pub fn forward_cut<T: Scalar>(model: &ModelState<T>, image: &Tensor<T>, cut: CutPoint) -> Result<PredictionSet<T>> {
    let mut tape = Tape::new();
    let g = forward_graph(&mut tape, model, image, Mode::Infer, Some(cut))?;
    Ok(collect(&tape, &g))
}

/// As [`forward_cut`], also returning the multiply-accumulates executed.
pub fn forward_cut_counted<T: Scalar>(
    model: &ModelState<T>,
    image: &Tensor<T>,
    cut: CutPoint,
) -> Result<(PredictionSet<T>, u64)> {
    let mut tape = Tape::new();
    let g = forward_graph(&mut tape, model, image, Mode::Infer, Some(cut))?;
    Ok((collect(&tape, &g), tape.macs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::config::NetworkConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> NetworkConfig {
        NetworkConfig {
            pyramids: 2,
            levels: 2,
            features: 16,
            input_h: 64,
            input_w: 64,
            entry_channels: [8, 8, 8, 8, 12, 12, 16],
            ..NetworkConfig::toy()
        }
    }

    fn image(cfg: &NetworkConfig, b: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([b, cfg.input_h, cfg.input_w, 3], |_| rng.random())
    }

    #[test]
    fn entry_flow_shapes() {
        let cfg = NetworkConfig::toy();
        let model = ModelState::<f32>::init(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(image(&cfg, 1, 2));
        let mut b = GraphBuilder::new(&mut tape, &model, Mode::Infer);
        let y = b.entry_flow(x).unwrap();
        assert_eq!(tape.shape(y), &[1, 16, 16, 64]);
    }

    #[test]
    fn entry_flow_paper_widths_on_toy_input() {
        let cfg = NetworkConfig { pyramids: 1, levels: 1, input_h: 128, input_w: 128, ..NetworkConfig::paper() };
        let model = ModelState::<f32>::init(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([1, 128, 128, 3]));
        let mut b = GraphBuilder::new(&mut tape, &model, Mode::Infer);
        let y = b.entry_flow(x).unwrap();
        assert_eq!(tape.shape(y), &[1, 16, 16, 384]);
        assert!(tape.value(y).all_finite());
    }

    #[test]
    fn entry_flow_rejects_wrong_image() {
        let cfg = small();
        let model = ModelState::<f32>::init(&cfg, 1).unwrap();
        let bad = Tensor::zeros([1, 32, 64, 3]);
        assert!(forward_full(&model, &bad).is_err());
    }

    #[test]
    fn separable_residual_identity_and_projection() {
        let cfg = small();
        let mut model = ModelState::<f32>::init(&cfg, 1).unwrap();
        model.params.insert("t/dw".into(), Tensor::zeros([3, 3, 4]));
        model.params.insert("t/pw".into(), Tensor::zeros([1, 1, 4, 4]));
        model.params.insert("t/norm/scale".into(), Tensor::filled([4], 1.0));
        model.params.insert("t/norm/shift".into(), Tensor::zeros([4]));
        model.buffers.insert("t/norm/mean".into(), Tensor::zeros([4]));
        model.buffers.insert("t/norm/var".into(), Tensor::filled([4], 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = Tensor::<f32>::from_fn([2, 8, 8, 4], |_| rng.random_range(-1.0..1.0));
        for mode in [Mode::Infer, Mode::Train] {
            let mut tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let mut b = GraphBuilder::new(&mut tape, &model, mode);
            let y = b.separable_residual(x, "t").unwrap();
            assert_eq!(tape.value(y), &x0);
        }
        model.params.insert("u/dw".into(), Tensor::filled([3, 3, 4], 0.1));
        model.params.insert("u/pw".into(), Tensor::filled([1, 1, 4, 8], 0.1));
        model.params.insert("u/norm/scale".into(), Tensor::filled([8], 1.0));
        model.params.insert("u/norm/shift".into(), Tensor::zeros([8]));
        model.buffers.insert("u/norm/mean".into(), Tensor::zeros([8]));
        model.buffers.insert("u/norm/var".into(), Tensor::filled([8], 1.0));
        model.params.insert("u/proj/w".into(), Tensor::filled([1, 1, 4, 8], 0.1));
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let mut b = GraphBuilder::new(&mut tape, &model, Mode::Infer);
        let y = b.separable_residual(x, "u").unwrap();
        assert_eq!(tape.shape(y), &[2, 8, 8, 8]);
        assert!(tape.value(y).all_finite());
    }

    #[test]
    fn units_skip_additivity() {
        let cfg = NetworkConfig { pyramids: 3, ..small() };
        let mut model = ModelState::<f32>::init(&cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let above = Tensor::<f32>::from_fn([1, 8, 8, 16], |_| rng.random_range(-1.0..1.0));
        let skip = Tensor::<f32>::from_fn([1, 4, 4, 16], |_| rng.random_range(-1.0..1.0));
        let run = |model: &ModelState<f32>, with_skip: bool| {
            let mut tape = Tape::new();
            let a = tape.leaf(above.clone());
            let s = tape.leaf(skip.clone());
            let mut b = GraphBuilder::new(&mut tape, model, Mode::Infer);
            let d = b.downscaling_unit(a, with_skip.then_some(s), "pyr03/lvl1/du").unwrap();
            let u = b.upscaling_unit(s, with_skip.then_some(a), "pyr02/lvl0/uu").unwrap();
            (tape.value(d).clone(), tape.value(u).clone())
        };
        let (d0, u0) = run(&model, false);
        assert_eq!(d0.shape(), &[1, 4, 4, 16]);
        assert_eq!(u0.shape(), &[1, 8, 8, 16]);
        let (d1, _) = run(&model, true);
        // oracle: skip projection computed directly
        let w = model.param("pyr03/lvl1/du/skip/w").unwrap();
        for p in 0..16 {
            for co in 0..16 {
                let mut acc = 0.0f32;
                for ci in 0..16 {
                    acc += skip.data()[p * 16 + ci] * w.data()[ci * 16 + co];
                }
                let i = p * 16 + co;
                assert!((d1.data()[i] - d0.data()[i] - acc).abs() < 1e-4);
            }
        }
        model.params.insert("pyr03/lvl1/du/skip/w".into(), Tensor::zeros([1, 1, 16, 16]));
        model.params.insert("pyr02/lvl0/uu/skip/w".into(), Tensor::zeros([1, 1, 16, 16]));
        let (dz, uz) = run(&model, true);
        assert_eq!(dz, d0);
        assert_eq!(uz, u0);
        // wrong skip extent
        let mut tape = Tape::new();
        let a = tape.leaf(above.clone());
        let bad = tape.leaf(Tensor::zeros([1, 8, 8, 16]));
        let mut b = GraphBuilder::new(&mut tape, &model, Mode::Infer);
        assert!(b.downscaling_unit(a, Some(bad), "pyr03/lvl1/du").is_err());
    }

    #[test]
    fn prediction_block_zero_projections() {
        let cfg = small();
        let mut model = ModelState::<f32>::init(&cfg, 7).unwrap();
        model.params.insert("pyr01/lvl1/pb/wh".into(), Tensor::zeros([1, 1, 16, 17]));
        model.params.insert("pyr01/lvl1/pb/wd".into(), Tensor::zeros([1, 1, 16, 17]));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x0 = Tensor::<f32>::from_fn([1, 8, 8, 16], |_| rng.random_range(-1.0..1.0));
        let mut tape = Tape::new();
        let x = tape.leaf(x0);
        let mut b = GraphBuilder::new(&mut tape, &model, Mode::Infer);
        let out = b.prediction_block(x, "pyr01/lvl1/pb").unwrap();
        assert_eq!(tape.shape(out.h), &[1, 8, 8, 17]);
        assert_eq!(tape.shape(out.features), &[1, 8, 8, 16]);
        assert!(tape.value(out.d).data().iter().all(|&v| v == 0.5));
        for row in tape.value(out.pose).data().chunks(3) {
            assert_eq!(row[2], 0.5);
        }
    }

    #[test]
    fn reinjection_dataflow() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = ModelState::<f32>::init(&cfg, 9).unwrap();
        for key in ["pyr01/lvl1/pb/wr", "pyr01/lvl1/pb/ws"] {
            let t = Tensor::from_fn([1, 1, 17, 16], |_| rng.random_range(-0.5..0.5));
            model.params.insert(key.into(), t);
        }
        let img = image(&cfg, 2, 10);
        let full = forward_full(&model, &img).unwrap();
        let mut zeroed = model.clone();
        zeroed.params.insert("pyr01/lvl1/pb/wr".into(), Tensor::zeros([1, 1, 17, 16]));
        zeroed.params.insert("pyr01/lvl1/pb/ws".into(), Tensor::zeros([1, 1, 17, 16]));
        let z = forward_full(&zeroed, &img).unwrap();
        let own = CutPoint::new(1, 1);
        assert_eq!(full.get(own), z.get(own));
        let downstream_changed = full
            .entries
            .iter()
            .skip(1)
            .any(|(c, p)| z.get(*c).unwrap().pose != p.pose);
        assert!(downstream_changed);
    }

    #[test]
    fn full_forward_entries_and_determinism() {
        let cfg = small();
        let model = ModelState::<f32>::init(&cfg, 11).unwrap();
        let img = image(&cfg, 1, 12);
        let a = forward_full(&model, &img).unwrap();
        let b = forward_full(&model, &img).unwrap();
        assert_eq!(a, b);
        let cuts: Vec<CutPoint> = a.entries.iter().map(|e| e.0).collect();
        assert_eq!(cuts, cfg.cut_points());
        for (c, p) in &a.entries {
            let (h, w) = cfg.level_extent(c.l);
            assert_eq!(p.h.shape(), &[1, h, w, 17]);
            assert_eq!(p.pose.shape(), &[1, 17, 3]);
            for j in p.pose.data().chunks(3) {
                assert!(j[0] > 0.0 && j[0] < 1.0 && j[1] > 0.0 && j[1] < 1.0);
                assert!((0.0..=1.0).contains(&j[2]));
            }
            assert!(p.conf.data().iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn cut_prefix_is_bit_identical() {
        let cfg = small();
        let model = ModelState::<f32>::init(&cfg, 13).unwrap();
        let img = image(&cfg, 1, 14);
        let full = forward_full(&model, &img).unwrap();
        for (i, cut) in cfg.cut_points().into_iter().enumerate() {
            let part = forward_cut(&model, &img, cut).unwrap();
            assert_eq!(part.len(), i + 1);
            for (c, p) in &part.entries {
                assert_eq!(Some(p), full.get(*c));
            }
        }
        assert!(forward_cut(&model, &img, CutPoint::new(2, 2)).is_err());
    }

    #[test]
    fn training_mode_collects_stats() {
        let cfg = small();
        let model = ModelState::<f32>::init(&cfg, 15).unwrap();
        let mut tape = Tape::new();
        let g = forward_graph(&mut tape, &model, &image(&cfg, 2, 16), Mode::Train, None).unwrap();
        let norms = model.params.keys().filter(|k| k.ends_with("/norm/scale")).count();
        assert_eq!(g.stats.len(), norms);
        assert_eq!(g.params.len(), model.params.len());
    }
}
