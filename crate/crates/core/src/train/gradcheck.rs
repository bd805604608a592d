//! Finite-difference check of the whole network's training gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{forward_graph, Graph, Mode, ModelState, NetworkConfig};
use crate::autodiff::{relative_error, Tape, Var};
use crate::data::{derive_seed, generate_many, Batch, DataConfig};
use crate::error::Result;

use super::loss::total_loss;

#[derive(Debug, Clone, PartialEq)]
pub struct NetGradReport {
    pub max_rel: f64,
    pub checked: usize,
    /// Coordinates redrawn because the perturbation crossed a kink.
    pub skipped: usize,
    pub worst_path: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

struct Eval {
    loss: f64,
    signature: u64,
    tape: Tape<f64>,
    graph: Graph<f64>,
    var: Var,
}

fn loss_of(model: &ModelState<f64>, batch: &Batch<f64>) -> Result<Eval> {
    let mut tape = Tape::new();
    let graph = forward_graph(&mut tape, model, &batch.images, Mode::Train, None)?;
    let (var, _) = total_loss(&mut tape, &graph.entries, batch, 1.0)?;
    Ok(Eval { loss: tape.value(var).item(), signature: tape.branch_signature(), tape, graph, var })
}

/// Compares the tape gradient of the total training loss (f64, training
/// mode, batch of two) with central differences at `coords` random
/// parameter coordinates.
///
/// Parameters that start at zero are given small random values first so
/// every path through the network carries gradient. A coordinate whose
/// ±`step` perturbation changes a non-smooth branch (ReLU sign, pooling
/// winner, confidence window, L1 sign, BCE clamp) is redrawn, since the
/// central difference there straddles a kink; at most `10 × coords`
/// redraws are made.
pub fn network_gradcheck(cfg: &NetworkConfig, seed: u64, coords: usize, step: f64) -> Result<NetGradReport> {
    let mut model = ModelState::<f64>::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3, 0));
    for p in model.params.values_mut() {
        if p.data().iter().all(|v| *v == 0.0) {
            p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    let data = DataConfig { augment: false, ..DataConfig::new(cfg.input_h, cfg.input_w) };
    let batch = Batch::<f64>::from_samples(&generate_many(&data, &[derive_seed(seed, 4, 0), derive_seed(seed, 4, 1)])?)?;

    let base = loss_of(&model, &batch)?;
    let grads = base.tape.backward(base.var)?;
    let (graph, signature) = (base.graph, base.signature);
    drop(base.tape);

    let paths: Vec<String> = model.params.keys().cloned().collect();
    let mut report = NetGradReport {
        max_rel: 0.0,
        checked: 0,
        skipped: 0,
        worst_path: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    while report.checked < coords && report.skipped < 10 * coords {
        let path = &paths[rng.random_range(0..paths.len())];
        let len = model.params[path].len();
        let i = rng.random_range(0..len);
        let analytic = grads.tensor(graph.params[path]).data()[i];
        let orig = model.params[path].data()[i];
        model.params.get_mut(path).expect("path").data_mut()[i] = orig + step;
        let up = loss_of(&model, &batch)?;
        model.params.get_mut(path).expect("path").data_mut()[i] = orig - step;
        let down = loss_of(&model, &batch)?;
        model.params.get_mut(path).expect("path").data_mut()[i] = orig;
        if up.signature != signature || down.signature != signature {
            report.skipped += 1;
            continue;
        }
        let numeric = (up.loss - down.loss) / (2.0 * step);
        let rel = relative_error(analytic, numeric);
        report.checked += 1;
        if rel > report.max_rel || report.worst_path.is_empty() {
            report.max_rel = rel.max(report.max_rel);
            report.worst_path = path.clone();
            report.worst_index = i;
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
