use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use sspnet::arch::{load_checkpoint_for, save_checkpoint, ModelState, NetworkConfig};
use sspnet::data::{cache, derive_seed, generate_many};
use sspnet::eval::quant::{quant_csv, quantization_study};
use sspnet::eval::rootnoise::{eval_camera, root_noise_experiment, rootnoise_csv, SIGMAS_MM};
use sspnet::eval::sweep::{anytime_sweep, sweep_csv, LatencyProtocol};
use sspnet::train::{metrics_csv, network_gradcheck, train, TrainConfig};
use sspnet::{DType, Error, Scalar};

#[derive(Parser)]
#[command(name = "sspnet", version, about = "Pyramid pose regression at desk scale")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// override a config key, e.g. --set steps=100
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// output file (or directory for `train`)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render synthetic samples into a cache file
    SynthData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 64)]
        count: usize,
    },
    /// Train a network on the synthetic stream
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Accuracy, FLOPs and latency for every cut point
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        /// skip latency measurement
        #[arg(long)]
        no_latency: bool,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 50)]
        reps: usize,
    },
    /// Latency and FLOPs per cut point (accuracy on a small set)
    Bench {
        #[command(flatten)]
        common: Common,
        /// trained weights; a fresh initialization when omitted
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 50)]
        reps: usize,
    },
    /// Argmax quantization floor vs soft-argmax
    Quantstudy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
    },
    /// Root-depth noise sensitivity of millimeter reconstructions
    Rootnoise {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Finite-difference check of the full network gradient
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 64)]
        coords: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
}

/// Failure classes mapped to exit codes.
enum Fail {
    /// bad invocation or input: exit 2
    Usage(String),
    /// a check did not pass or the run failed: exit 1
    Check(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::UnknownKey(_)
            | Error::Io { .. }
            | Error::CheckpointFormat(_)
            | Error::CheckpointVersion { .. }
            | Error::CheckpointTruncated { .. }
            | Error::CheckpointShape { .. }
            | Error::InvalidCut { .. }
            | Error::InvalidArgument { .. }
            | Error::Dataset(_) => Fail::Usage(e.to_string()),
            other => Fail::Check(other.to_string()),
        }
    }
}

type Res = Result<(), Fail>;

fn load_config(c: &Common) -> Result<TrainConfig, Fail> {
    let mut cfg = match &c.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::toy(),
    };
    for s in &c.set {
        cfg.set_pair(s)?;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_out(path: &Path, body: &str) -> Res {
    std::fs::write(path, body).map_err(|e| Fail::Usage(format!("cannot write {}: {e}", path.display())))
}

fn maybe_write(c: &Common, body: &str) -> Res {
    if let Some(p) = &c.out {
        write_out(p, body)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_synth(c: &Common, count: usize) -> Res {
    let cfg = load_config(c)?;
    let out = c.out.as_ref().ok_or_else(|| Fail::Usage("synth-data needs --out".into()))?;
    let seeds: Vec<u64> = (0..count as u64).map(|i| derive_seed(cfg.seed, 9, i)).collect();
    let samples = generate_many(&cfg.data, &seeds)?;
    cache::write_cache(out, &samples)?;
    let vis: usize = samples.iter().map(|s| s.visible.iter().filter(|v| **v).count()).sum();
    let two_d = samples.iter().filter(|s| !s.has_depth).count();
    println!(
        "{count} samples {}x{} -> {} ({:.1}% joints visible, {two_d} 2D-only)",
        cfg.data.height,
        cfg.data.width,
        out.display(),
        100.0 * vis as f64 / (count.max(1) * 17) as f64
    );
    Ok(())
}

fn cmd_train_typed<T: Scalar>(c: &Common, cfg: &TrainConfig) -> Res {
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    std::fs::create_dir_all(&dir).map_err(|e| Fail::Usage(format!("cannot create {}: {e}", dir.display())))?;
    let t0 = Instant::now();
    let out = train::<T>(cfg, None, &mut |p| {
        let tl = p.train_loss.map(|v| format!("{v:.5}")).unwrap_or_else(|| "-".into());
        println!(
            "step {:>6}  lr {:.1e}  train_loss {tl}  val_err2d {:.5}  ({:.0}s)",
            p.step,
            p.lr,
            p.final_err2d,
            t0.elapsed().as_secs_f64()
        );
    })?;
    write_out(&dir.join("metrics.csv"), &metrics_csv(&out.log))?;
    write_out(&dir.join("config.txt"), &cfg.to_text())?;
    save_checkpoint(&out.model, dir.join("model.ckpt"))?;
    let curve = out.final_curve();
    if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
        println!("final output val_err2d {:.5} -> {:.5}; lr drops at {:?}", first.1, last.1, out.lr_drops);
    }
    println!("wrote {}/{{metrics.csv,config.txt,model.ckpt}}", dir.display());
    Ok(())
}

fn cmd_train(c: &Common) -> Res {
    let cfg = load_config(c)?;
    match cfg.network.precision {
        DType::F32 => cmd_train_typed::<f32>(c, &cfg),
        DType::F64 => cmd_train_typed::<f64>(c, &cfg),
    }
}

fn eval_set(cfg: &TrainConfig, n: usize) -> Result<Vec<sspnet::data::SyntheticSample>, Fail> {
    let data = sspnet::data::DataConfig { augment: false, ..cfg.data.clone() };
    let seeds: Vec<u64> = (0..n as u64).map(|i| derive_seed(cfg.seed, 10, i)).collect();
    Ok(generate_many(&data, &seeds)?)
}

fn print_sweep(rep: &sspnet::eval::sweep::EvalReport) {
    println!("{:>6} {:>10} {:>8} {:>8} {:>9} {:>14} {:>11}", "cut", "MPJPE mm", "PCK150", "AUC", "err2d", "MACs/image", "latency ms");
    for r in &rep.rows {
        let m = &r.metrics;
        let lat = r.latency_ms.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        println!(
            "{:>6} {:>10.2} {:>8.4} {:>8.4} {:>9.5} {:>14} {:>11}",
            r.cut.to_string(),
            m.mpjpe_mm,
            m.pck150,
            m.auc,
            m.err2d,
            r.flops,
            lat
        );
    }
}

fn cmd_eval(c: &Common, checkpoint: &Path, samples: usize, protocol: Option<LatencyProtocol>) -> Res {
    let cfg = load_config(c)?;
    let model: ModelState<f32> = load_checkpoint_for(checkpoint, &cfg.network)?;
    if samples == 0 {
        return Err(Fail::Usage("--samples must be >= 1".into()));
    }
    let rep = anytime_sweep(&model, &eval_set(&cfg, samples)?, protocol)?;
    print_sweep(&rep);
    maybe_write(c, &sweep_csv(&rep))
}

fn cmd_bench(c: &Common, checkpoint: Option<&Path>, protocol: LatencyProtocol) -> Res {
    let cfg = load_config(c)?;
    let model: ModelState<f32> = match checkpoint {
        Some(p) => load_checkpoint_for(p, &cfg.network)?,
        None => ModelState::init(&cfg.network, cfg.seed)?,
    };
    println!("protocol: batch 1, single worker, median of {} after {} warmups", protocol.reps, protocol.warmup);
    let rep = anytime_sweep(&model, &eval_set(&cfg, 8)?, Some(protocol))?;
    print_sweep(&rep);
    maybe_write(c, &sweep_csv(&rep))
}

fn cmd_quant(c: &Common, samples: usize) -> Res {
    let seed = c.seed.unwrap_or(0);
    let rows = quantization_study(&[4, 8, 16, 32], samples, seed)?;
    println!("{:>4} {:>12} {:>12} {:>15}", "s", "argmax mm", "analytic mm", "soft-argmax mm");
    for r in &rows {
        println!("{:>4} {:>12.2} {:>12.2} {:>15.2}", r.s, r.argmax_mm, r.analytic_mm, r.softargmax_mm);
    }
    maybe_write(c, &quant_csv(&rows))
}

fn cmd_rootnoise(c: &Common, trials: usize) -> Res {
    let seed = c.seed.unwrap_or(0);
    let rows = root_noise_experiment(&eval_camera(5000.0)?, &SIGMAS_MM, trials, seed)?;
    println!("{:>8} {:>14} {:>22}", "sigma", "increase mm", "vs model error mm");
    for r in &rows {
        println!("{:>8} {:>14.3} {:>22.3}", r.sigma_mm, r.increase_mm, r.increase_vs_model_mm);
    }
    maybe_write(c, &rootnoise_csv(&rows))
}

const GRADCHECK_TOL: f64 = 1e-5;

fn cmd_gradcheck(c: &Common, coords: usize, step: f64) -> Res {
    let cfg = load_config(c)?;
    let net = NetworkConfig { precision: DType::F64, ..cfg.network.clone() };
    let r = network_gradcheck(&net, cfg.seed, coords, step)?;
    println!(
        "max relative error {:.3e} over {} coordinates, {} redrawn at kinks (worst {}[{}]: analytic {:.6e}, numeric {:.6e})",
        r.max_rel, r.checked, r.skipped, r.worst_path, r.worst_index, r.worst_analytic, r.worst_numeric
    );
    maybe_write(c, &format!("max_rel,checked\n{:e},{}\n", r.max_rel, r.checked))?;
    if r.max_rel < GRADCHECK_TOL {
        Ok(())
    } else {
        Err(Fail::Check(format!("gradient check failed: {:.3e} >= {GRADCHECK_TOL:e}", r.max_rel)))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = sspnet::par::init_from_env() {
        eprintln!("SSP_THREADS={n}");
    }
    let r = match &cli.cmd {
        Cmd::SynthData { common, count } => cmd_synth(common, *count),
        Cmd::Train { common } => cmd_train(common),
        Cmd::Eval { common, checkpoint, samples, no_latency, warmup, reps } => {
            let p = (!no_latency).then_some(LatencyProtocol { warmup: *warmup, reps: *reps });
            cmd_eval(common, checkpoint, *samples, p)
        }
        Cmd::Bench { common, checkpoint, warmup, reps } => {
            cmd_bench(common, checkpoint.as_deref(), LatencyProtocol { warmup: *warmup, reps: *reps })
        }
        Cmd::Quantstudy { common, samples } => cmd_quant(common, *samples),
        Cmd::Rootnoise { common, trials } => cmd_rootnoise(common, *trials),
        Cmd::Gradcheck { common, coords, step } => cmd_gradcheck(common, *coords, *step),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Fail::Check(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
