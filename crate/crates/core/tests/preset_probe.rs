//! Ignored calibration probes; run with
//! `cargo test -p stampnet-core --test preset_probe -- --ignored --nocapture`
//! and PROBE_* environment knobs.

use stampnet_core::dataset::{
    enumerate_design_space, generate_samples, split_interpolation, subset_every_kth_bf,
    GeometrySpec,
};
use stampnet_core::nn::{Unet, UnetConfig};
use stampnet_core::optim::{evaluate, train, AdamConfig, AdamState, Network, TrainConfig, TrainSample};
use std::time::Instant;

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

#[test]
#[ignore]
fn small_preset_unet_interpolation() {
    let t0 = Instant::now();
    let designs = subset_every_kth_bf(&enumerate_design_space(), 4);
    let samples = generate_samples(&designs, &GeometrySpec::default());
    println!("dataset: {} samples in {:.1}s", samples.len(), t0.elapsed().as_secs_f64());
    let (train_s, test_s) = split_interpolation(&samples, 7, 0.10).unwrap();
    let tr: Vec<TrainSample> = train_s.iter().map(|s| s.unet_sample()).collect();
    let te: Vec<TrainSample> = test_s.iter().map(|s| s.unet_sample()).collect();
    let width = env_or("PROBE_WIDTH", 0.0625);
    let epochs = env_or("PROBE_EPOCHS", 10);
    let lr = env_or("PROBE_LR", 3e-3);
    let batch = env_or("PROBE_BATCH", 9);
    let net = Network::Unet(Unet::new(UnetConfig::with_width(width)).unwrap());
    let mut state = net.init_state(1);
    let mut adam = AdamState::new(&state.params, AdamConfig::with_learning_rate(lr));
    let config = TrainConfig { epochs, batch_size: batch, seed: 1, eval_cadence: 5 };
    let t1 = Instant::now();
    let series = train(&net, &mut state, &mut adam, &tr, &te, &config).unwrap();
    let dt = t1.elapsed().as_secs_f64();
    println!(
        "width {width} lr {lr} batch {batch}: {epochs} epochs in {:.0}s ({:.2}s/epoch, {:.0} ms/sample-step)",
        dt,
        dt / epochs as f64,
        dt / (epochs * tr.len()) as f64 * 1e3
    );
    for r in &series {
        if let Some(test_mse) = r.test_mse {
            let mpes: Vec<f64> = r.test_mpe.iter().map(|m| m.abs()).collect();
            let within = mpes.iter().filter(|&&m| m <= 0.04).count();
            let mut sorted = mpes.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            println!(
                "epoch {:3}: train {:.2e} test {:.2e} |MPE| median {:.4} max {:.4} within-0.04 {}/{}",
                r.epoch, r.train_mse, test_mse,
                sorted[sorted.len() / 2], sorted.last().unwrap(), within, mpes.len()
            );
        }
    }
    let (_, train_mpe) = evaluate(&net, &mut state, &tr, batch).unwrap();
    let w = train_mpe.iter().filter(|m| m.abs() <= 0.04).count();
    println!("train-set within-0.04: {}/{}", w, train_mpe.len());
}

#[test]
#[ignore]
fn overfit_eight_samples() {
    let designs: Vec<_> = enumerate_design_space().into_iter().step_by(133).take(8).collect();
    let set: Vec<TrainSample> = generate_samples(&designs, &GeometrySpec::default())
        .iter()
        .map(|s| s.unet_sample())
        .collect();
    let width = env_or("PROBE_WIDTH", 0.125);
    let steps = env_or("PROBE_STEPS", 300);
    let lr = env_or("PROBE_LR", 5e-3);
    let batch = env_or("PROBE_BATCH", 8);
    let net = Network::Unet(Unet::new(UnetConfig::with_width(width)).unwrap());
    let mut state = net.init_state(1);
    let mut adam = AdamState::new(&state.params, AdamConfig::with_learning_rate(lr));
    let config = TrainConfig { epochs: steps, batch_size: batch, seed: 1, eval_cadence: 10_000 };
    let t0 = Instant::now();
    let series = train(&net, &mut state, &mut adam, &set, &[], &config).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("lr {lr} batch {batch}: {steps} epochs in {:.0}s ({:.2}s/epoch)", dt, dt / steps as f64);
    for r in series.iter().step_by(20) {
        println!("step {:4}: mse {:.3e}", r.epoch, r.train_mse);
    }
    let below = series.iter().find(|r| r.train_mse < 1e-4);
    match below {
        Some(r) => println!("mse < 1e-4 first reached at step {}", r.epoch),
        None => println!("mse < 1e-4 NOT reached; final {:.3e}", series.last().unwrap().train_mse),
    }
}
