use crate::arch::{BlockVars, CutPoint};
use crate::autodiff::{Tape, Var};
use crate::data::Batch;
use crate::error::Result;
use crate::tensor::Scalar;

/// Loss of one supervised output: elastic net on pose plus `conf_weight`
/// times BCE on confidence.
pub fn entry_loss<T: Scalar>(tape: &mut Tape<T>, block: &BlockVars, batch: &Batch<T>, conf_weight: f64) -> Result<Var> {
    let pose = tape.elastic_net(block.pose, &batch.pose, &batch.mask)?;
    let conf = tape.bce(block.conf, &batch.conf)?;
    let conf = if conf_weight == 1.0 { conf } else { tape.scale(conf, conf_weight)? };
    tape.add(pose, conf)
}

/// Mean of [`entry_loss`] over every output. Also returns the
/// per-output loss variables.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    entries: &[(CutPoint, BlockVars)],
    batch: &Batch<T>,
    conf_weight: f64,
) -> Result<(Var, Vec<Var>)> {
    let parts = entries.iter().map(|(_, b)| entry_loss(tape, b, batch, conf_weight)).collect::<Result<Vec<_>>>()?;
    Ok((tape.mean_of(&parts)?, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{forward_graph, Mode, ModelState, NetworkConfig};
    use crate::data::{generate_many, DataConfig};

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            pyramids: 2,
            levels: 1,
            features: 8,
            input_h: 32,
            input_w: 32,
            entry_channels: [4, 4, 4, 4, 8, 8, 8],
            ..NetworkConfig::toy()
        }
    }

    fn batch() -> Batch<f64> {
        let d = DataConfig { augment: false, ..DataConfig::new(32, 32) };
        Batch::from_samples(&generate_many(&d, &[1, 2]).unwrap()).unwrap()
    }

    #[test]
    fn single_entry_equals_its_loss() {
        let cfg = NetworkConfig { pyramids: 1, ..tiny() };
        let model = ModelState::<f64>::init(&cfg, 3).unwrap();
        let b = batch();
        let mut tape = Tape::new();
        let g = forward_graph(&mut tape, &model, &b.images, Mode::Train, None).unwrap();
        assert_eq!(g.entries.len(), 1);
        let (t, parts) = total_loss(&mut tape, &g.entries, &b, 1.0).unwrap();
        assert_eq!(tape.value(t).item(), tape.value(parts[0]).item());
    }

    #[test]
    fn duplicate_entries_keep_the_mean() {
        let model = ModelState::<f64>::init(&tiny(), 3).unwrap();
        let b = batch();
        let mut tape = Tape::new();
        let g = forward_graph(&mut tape, &model, &b.images, Mode::Train, None).unwrap();
        let one = g.entries[0].clone();
        let (single, _) = total_loss(&mut tape, std::slice::from_ref(&one), &b, 1.0).unwrap();
        let (double, _) = total_loss(&mut tape, &[one.clone(), one], &b, 1.0).unwrap();
        let (s, d) = (tape.value(single).item(), tape.value(double).item());
        assert!((s - d).abs() <= 1e-15 * s.abs());
    }

    #[test]
    fn confidence_weight_scales_only_the_bce_term() {
        let model = ModelState::<f64>::init(&tiny(), 3).unwrap();
        let b = batch();
        let mut tape = Tape::new();
        let g = forward_graph(&mut tape, &model, &b.images, Mode::Train, None).unwrap();
        let block = g.entries[0].1;
        let pose = tape.elastic_net(block.pose, &b.pose, &b.mask).unwrap();
        let conf = tape.bce(block.conf, &b.conf).unwrap();
        let (p, c) = (tape.value(pose).item(), tape.value(conf).item());
        for w in [0.0, 1.0, 2.5] {
            let l = entry_loss(&mut tape, &block, &b, w).unwrap();
            let v = tape.value(l).item();
            assert!((v - (p + w * c)).abs() <= 1e-12 * v.abs(), "{w}: {v} vs {}", p + w * c);
        }
    }

    #[test]
    fn perfect_saturated_predictions_are_near_zero() {
        let b = batch();
        let mut tape = Tape::<f64>::new();
        let pose = tape.leaf(b.pose.clone());
        let conf = tape.leaf(b.conf.map(|c| if c > 0.5 { 1.0 - 1e-7 } else { 1e-7 }));
        let h = tape.leaf(crate::Tensor::zeros([1]));
        let block = BlockVars { h, d: h, features: h, pose, conf };
        let (t, _) = total_loss(&mut tape, &[(CutPoint::new(1, 1), block)], &b, 1.0).unwrap();
        assert!(tape.value(t).item() < 1e-5);
    }

    #[test]
    fn masked_components_get_zero_gradient() {
        let mut b = batch();
        // make sample 1 two-dimensional, joint 2 of sample 0 invisible
        let n = crate::data::NUM_JOINTS;
        for j in 0..n {
            b.mask.data_mut()[(n + j) * 3 + 2] = 0.0;
        }
        b.mask.data_mut()[2 * 3..2 * 3 + 3].copy_from_slice(&[0.0; 3]);
        let mut tape = Tape::<f64>::new();
        let pose = tape.leaf(b.pose.map(|v| v + 0.1));
        let conf = tape.leaf(b.conf.map(|_| 0.5));
        let h = tape.leaf(crate::Tensor::zeros([1]));
        let block = BlockVars { h, d: h, features: h, pose, conf };
        let (t, _) = total_loss(&mut tape, &[(CutPoint::new(1, 1), block)], &b, 1.0).unwrap();
        let g = tape.backward(t).unwrap();
        let gp = g.get(pose).unwrap();
        for (gv, m) in gp.iter().zip(b.mask.data()) {
            if *m == 0.0 {
                assert_eq!(*gv, 0.0);
            } else {
                assert!(*gv != 0.0);
            }
        }
    }
}
