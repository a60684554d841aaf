//! Experiment execution: dataset resolution, splitting, training, and the
//! full artifact set (metrics CSVs, per-sample and sorted MPE CSVs, the final
//! checkpoint, and a digest manifest).

use crate::checkpoint::{self, Checkpoint};
use crate::config::{DatasetSource, ExperimentConfig, ModelKind, TaskKind};
use crate::csvio::write_csv;
use crate::digest::{fnv1a, fnv1a_file};
use crate::manifest::Manifest;
use stampnet_core::dataset::{
    enumerate_design_space, generate_samples, read_dataset, split_extrapolation,
    split_interpolation, subset_every_kth_bf, GeometrySpec, Sample,
};
use stampnet_core::nn::{Mlp, MlpConfig, Unet, UnetConfig};
use stampnet_core::optim::{evaluate, train, AdamConfig, AdamState, MetricsRecord, Network, TrainConfig, TrainSample};
use stampnet_core::{Error, Result};
use std::path::Path;

pub const METRICS_CSV: &str = "metrics.csv";
pub const MPE_TRAIN_CSV: &str = "mpe_train.csv";
pub const MPE_TEST_CSV: &str = "mpe_test.csv";
pub const MPE_TRAIN_SORTED_CSV: &str = "mpe_train_sorted.csv";
pub const MPE_TEST_SORTED_CSV: &str = "mpe_test_sorted.csv";
pub const CHECKPOINT_FILE: &str = "model.sfsm";

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub final_train_mse: f64,
    pub final_test_mse: f64,
    /// Signed per-sample errors, in split order.
    pub train_mpe: Vec<f64>,
    pub test_mpe: Vec<f64>,
}

/// Load a dataset file or generate the parametric samples.
pub fn resolve_samples(source: &DatasetSource) -> Result<Vec<Sample>> {
    match source {
        DatasetSource::File(path) => read_dataset(path),
        DatasetSource::Generate { bf_stride } => {
            let designs = subset_every_kth_bf(&enumerate_design_space(), *bf_stride);
            Ok(generate_samples(&designs, &GeometrySpec::default()))
        }
    }
}

/// Content digest over the design scalars; identifies the sample population
/// without hashing a gigabyte of image data.
pub fn samples_digest(samples: &[Sample]) -> u64 {
    let mut bytes = Vec::with_capacity(samples.len() * 44);
    for s in samples {
        bytes.extend_from_slice(&s.design.ordinal.to_le_bytes());
        for v in [s.design.r1, s.design.r2, s.design.r3, s.design.bf, s.design.t] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fnv1a(&bytes)
}

pub fn split_samples(
    task: TaskKind,
    split_seed: u64,
    samples: &[Sample],
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    match task {
        TaskKind::Interpolation => split_interpolation(samples, split_seed, 0.10),
        TaskKind::Extrapolation => split_extrapolation(samples),
    }
}

pub fn build_network(model: ModelKind, width_multiplier: f64) -> Result<Network> {
    Ok(match model {
        ModelKind::Mlp => Network::Mlp(Mlp::new(MlpConfig::default())?),
        ModelKind::ResSeUnet => Network::Unet(Unet::new(UnetConfig::with_width(width_multiplier))?),
    })
}

pub fn to_train_samples(model: ModelKind, samples: &[Sample]) -> Vec<TrainSample> {
    samples
        .iter()
        .map(|s| match model {
            ModelKind::Mlp => s.mlp_sample(),
            ModelKind::ResSeUnet => s.unet_sample(),
        })
        .collect()
}

fn metrics_rows(series: &[MetricsRecord]) -> Vec<Vec<String>> {
    series
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                r.train_mse.to_string(),
                r.train_lmse().map(|v| v.to_string()).unwrap_or_default(),
                r.test_mse.map(|v| v.to_string()).unwrap_or_default(),
                r.test_lmse().map(|v| v.to_string()).unwrap_or_default(),
            ]
        })
        .collect()
}

fn mpe_rows(samples: &[Sample], mpe: &[f64]) -> Vec<Vec<String>> {
    samples
        .iter()
        .zip(mpe)
        .enumerate()
        .map(|(i, (s, m))| vec![i.to_string(), s.design.ordinal.to_string(), m.to_string()])
        .collect()
}

/// Ascending by signed value.
fn sorted_mpe_rows(mpe: &[f64]) -> Vec<Vec<String>> {
    let mut sorted = mpe.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite MPE"));
    sorted
        .iter()
        .enumerate()
        .map(|(rank, m)| vec![rank.to_string(), m.to_string()])
        .collect()
}

/// Train per the configuration and write the full artifact set into
/// `config.out_dir`. Identical configurations produce byte-identical CSVs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let samples = resolve_samples(&config.dataset)?;
    let dataset_digest = samples_digest(&samples);
    let (train_samples, test_samples) = split_samples(config.task, config.split_seed, &samples)?;
    drop(samples);

    let net = build_network(config.model, config.width_multiplier)?;
    let train_set = to_train_samples(config.model, &train_samples);
    let test_set = to_train_samples(config.model, &test_samples);
    let mut state = net.init_state(config.seed);
    let train_config = TrainConfig {
        epochs: config.epochs,
        batch_size: config.batch_size,
        seed: config.seed,
        eval_cadence: config.eval_cadence,
    };
    let mut adam = AdamState::new(&state.params, AdamConfig::with_learning_rate(config.learning_rate));
    let series = train(&net, &mut state, &mut adam, &train_set, &test_set, &train_config)?;

    let (final_train_mse, train_mpe) = evaluate(&net, &mut state, &train_set, config.batch_size)?;
    let last = series.last().expect("epochs >= 1");
    let final_test_mse = last.test_mse.expect("final epoch always evaluates");
    let test_mpe = last.test_mpe.clone();

    let dir = &config.out_dir;
    write_csv(
        &dir.join(METRICS_CSV),
        &["epoch", "train_mse", "train_lmse", "test_mse", "test_lmse"],
        &metrics_rows(&series),
    )?;
    write_csv(
        &dir.join(MPE_TRAIN_CSV),
        &["index", "ordinal", "mpe"],
        &mpe_rows(&train_samples, &train_mpe),
    )?;
    write_csv(
        &dir.join(MPE_TEST_CSV),
        &["index", "ordinal", "mpe"],
        &mpe_rows(&test_samples, &test_mpe),
    )?;
    write_csv(&dir.join(MPE_TRAIN_SORTED_CSV), &["rank", "mpe"], &sorted_mpe_rows(&train_mpe))?;
    write_csv(&dir.join(MPE_TEST_SORTED_CSV), &["rank", "mpe"], &sorted_mpe_rows(&test_mpe))?;
    checkpoint::save(
        &dir.join(CHECKPOINT_FILE),
        &Checkpoint {
            config_digest: config.digest(),
            epoch: config.epochs as u32,
            state,
            adam,
        },
    )?;

    let artifact_names = [
        METRICS_CSV,
        MPE_TRAIN_CSV,
        MPE_TEST_CSV,
        MPE_TRAIN_SORTED_CSV,
        MPE_TEST_SORTED_CSV,
        CHECKPOINT_FILE,
    ];
    let mut artifacts = Vec::new();
    for name in artifact_names {
        artifacts.push((name.to_string(), fnv1a_file(&dir.join(name))?));
    }
    Manifest {
        config: config.clone(),
        dataset_count: train_samples.len() + test_samples.len(),
        dataset_digest,
        train_count: train_samples.len(),
        test_count: test_samples.len(),
        artifacts,
    }
    .write(dir)?;

    Ok(RunSummary { final_train_mse, final_test_mse, train_mpe, test_mpe })
}

/// Re-evaluate a finished run from its checkpoint: rebuilds the dataset and
/// split from the manifest configuration, restores parameters, and writes
/// fresh MPE CSVs into `out_dir`.
pub fn evaluate_run(run_dir: &Path, out_dir: &Path) -> Result<RunSummary> {
    let manifest = Manifest::read(run_dir)?;
    let config = &manifest.config;
    let net = build_network(config.model, config.width_multiplier)?;
    let template_state = net.init_state(0);
    let bn_channels: Vec<usize> = template_state.bn.iter().map(|b| b.channels()).collect();
    let ckpt = checkpoint::load_for(&run_dir.join(CHECKPOINT_FILE), &template_state.params, &bn_channels)?;
    let mut state = ckpt.state;

    let samples = resolve_samples(&config.dataset)?;
    if samples_digest(&samples) != manifest.dataset_digest {
        return Err(Error::Format {
            context: "evaluate_run",
            detail: "dataset digest does not match the run manifest".into(),
        });
    }
    let (train_samples, test_samples) = split_samples(config.task, config.split_seed, &samples)?;
    let train_set = to_train_samples(config.model, &train_samples);
    let test_set = to_train_samples(config.model, &test_samples);
    let (final_train_mse, train_mpe) = evaluate(&net, &mut state, &train_set, config.batch_size)?;
    let (final_test_mse, test_mpe) = evaluate(&net, &mut state, &test_set, config.batch_size)?;

    std::fs::create_dir_all(out_dir)?;
    write_csv(
        &out_dir.join(MPE_TRAIN_CSV),
        &["index", "ordinal", "mpe"],
        &mpe_rows(&train_samples, &train_mpe),
    )?;
    write_csv(
        &out_dir.join(MPE_TEST_CSV),
        &["index", "ordinal", "mpe"],
        &mpe_rows(&test_samples, &test_mpe),
    )?;
    write_csv(&out_dir.join(MPE_TRAIN_SORTED_CSV), &["rank", "mpe"], &sorted_mpe_rows(&train_mpe))?;
    write_csv(&out_dir.join(MPE_TEST_SORTED_CSV), &["rank", "mpe"], &sorted_mpe_rows(&test_mpe))?;
    Ok(RunSummary { final_train_mse, final_test_mse, train_mpe, test_mpe })
}
