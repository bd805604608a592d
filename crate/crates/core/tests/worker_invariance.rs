//! Results must not depend on the number of workers.

use sspnet::arch::{forward_full, ModelState, NetworkConfig};
use sspnet::data::{generate_many, Batch, DataConfig};
use sspnet::eval::quant::quantization_study;
use sspnet::eval::rootnoise::{eval_camera, root_noise_experiment, SIGMAS_MM};
use sspnet::par::with_workers;
use sspnet::train::{metrics_csv, train, TrainConfig};

fn small() -> TrainConfig {
    let mut c = TrainConfig::toy();
    c.network = NetworkConfig {
        pyramids: 2,
        levels: 1,
        features: 16,
        input_h: 64,
        input_w: 64,
        entry_channels: [4, 4, 8, 8, 16, 16, 16],
        ..NetworkConfig::toy()
    };
    c.data.height = 64;
    c.data.width = 64;
    c.schedule.steps = 4;
    c.schedule.batch_size = 4;
    c.schedule.val_samples = 6;
    c.schedule.val_interval = 2;
    c.seed = 13;
    c
}

#[test]
fn training_is_worker_invariant() {
    let c = small();
    let one = with_workers(1, || train::<f32>(&c, None, &mut |_| {}).unwrap());
    let four = with_workers(4, || train::<f32>(&c, None, &mut |_| {}).unwrap());
    assert_eq!(one.model, four.model);
    assert_eq!(metrics_csv(&one.log), metrics_csv(&four.log));
}

#[test]
fn forward_and_data_are_worker_invariant() {
    let cfg = NetworkConfig::toy();
    let model = ModelState::<f32>::init(&cfg, 2).unwrap();
    let data = DataConfig::new(cfg.input_h, cfg.input_w);
    let run = |n| {
        with_workers(n, || {
            let s = generate_many(&data, &[1, 2, 3]).unwrap();
            let b = Batch::<f32>::from_samples(&s).unwrap();
            (b.images.clone(), forward_full(&model, &b.images).unwrap())
        })
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.1, b.1);
}

#[test]
fn studies_are_worker_invariant() {
    let q1 = with_workers(1, || quantization_study(&[4, 8], 100_000, 9).unwrap());
    let q4 = with_workers(4, || quantization_study(&[4, 8], 100_000, 9).unwrap());
    assert_eq!(q1, q4);
    let cam = eval_camera(5000.0).unwrap();
    let r1 = with_workers(1, || root_noise_experiment(&cam, &SIGMAS_MM, 100, 9).unwrap());
    let r4 = with_workers(4, || root_noise_experiment(&cam, &SIGMAS_MM, 100, 9).unwrap());
    assert_eq!(r1, r4);
}
