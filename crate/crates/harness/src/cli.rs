//! Command-line interface: flag parsing and subcommand dispatch.

use crate::compare::compare_runs;
use crate::config::{DatasetSource, ExperimentConfig, ModelKind, TaskKind};
use crate::demo::run_demo_location;
use crate::fields::{export_fields, ExportNormalization};
use crate::runner::{evaluate_run, resolve_samples, run_experiment};
use stampnet_core::dataset::write_dataset;
use stampnet_core::{Error, Result};
use std::collections::BTreeMap;
use std::path::PathBuf;

pub const USAGE: &str = "\
stampnet — strain-field surrogate experiments

USAGE:
  stampnet dataset build --out FILE [--bf-stride N] [--workers N]
  stampnet train [--config FILE] [--preset small|full] --model mlp|res_se_unet
                 --task interpolation|extrapolation --out DIR
                 [--seed N] [--epochs N] [--batch-size N] [--learning-rate X]
                 [--width-multiplier X] [--eval-cadence N] [--split-seed N]
                 [--dataset FILE | --bf-stride N]
  stampnet eval --run DIR --out DIR
  stampnet compare --run-a DIR --run-b DIR [--out FILE]
  stampnet demo-location --out DIR
  stampnet export-fields --run DIR --ordinals 3,17,42 --out DIR
                 [--normalization per-image|global]

Config files use the same keys as the train flags (key=value lines).
Exit codes: 0 success, 2 usage, 3 config/format, 4 i/o, 5 training aborted.
";

fn usage_err(detail: impl Into<String>) -> Error {
    Error::Format { context: "usage", detail: detail.into() }
}

/// Exit code category for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Format { context: "usage", .. } => 2,
        Error::Format { .. } => 3,
        Error::Io(_) => 4,
        Error::NanLoss { .. } => 5,
        _ => 1,
    }
}

/// Parse `--key value` pairs; returns the flag map.
fn parse_flags(args: &[String]) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let mut i = 0;
    while i < args.len() {
        let key = args[i]
            .strip_prefix("--")
            .ok_or_else(|| usage_err(format!("expected a --flag, got {:?}", args[i])))?;
        let value = args
            .get(i + 1)
            .ok_or_else(|| usage_err(format!("flag --{key} needs a value")))?;
        if map.insert(key.to_string(), value.clone()).is_some() {
            return Err(usage_err(format!("flag --{key} given twice")));
        }
        i += 2;
    }
    Ok(map)
}

struct Flags(BTreeMap<String, String>);

impl Flags {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| usage_err(format!("flag --{key}: cannot parse {v:?}"))),
        }
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key).ok_or_else(|| usage_err(format!("missing required flag --{key}")))
    }

    fn finish(self) -> Result<()> {
        if let Some(k) = self.0.keys().next() {
            return Err(usage_err(format!("unknown flag --{k}")));
        }
        Ok(())
    }
}

pub fn dispatch(args: &[String]) -> Result<()> {
    let (command, rest) = args.split_first().ok_or_else(|| usage_err("missing command"))?;
    match command.as_str() {
        "dataset" => {
            let (sub, rest) =
                rest.split_first().ok_or_else(|| usage_err("dataset: missing subcommand"))?;
            if sub != "build" {
                return Err(usage_err(format!("dataset: unknown subcommand {sub:?}")));
            }
            let mut flags = Flags(parse_flags(rest)?);
            let out = PathBuf::from(flags.require("out")?);
            let bf_stride: u32 = flags.take_parsed("bf-stride")?.unwrap_or(1);
            if let Some(workers) = flags.take_parsed::<usize>("workers")? {
                stampnet_core::set_worker_override(workers);
            }
            flags.finish()?;
            let samples = resolve_samples(&DatasetSource::Generate { bf_stride })?;
            write_dataset(&out, &samples)?;
            println!("wrote {} samples to {}", samples.len(), out.display());
            Ok(())
        }
        "train" => {
            let mut flags = Flags(parse_flags(rest)?);
            let config = build_train_config(&mut flags)?;
            flags.finish()?;
            let summary = run_experiment(&config)?;
            println!(
                "run complete: train mse {:.6e}, test mse {:.6e} ({} test samples) -> {}",
                summary.final_train_mse,
                summary.final_test_mse,
                summary.test_mpe.len(),
                config.out_dir.display()
            );
            Ok(())
        }
        "eval" => {
            let mut flags = Flags(parse_flags(rest)?);
            let run = PathBuf::from(flags.require("run")?);
            let out = PathBuf::from(flags.require("out")?);
            flags.finish()?;
            let summary = evaluate_run(&run, &out)?;
            println!(
                "evaluated: train mse {:.6e}, test mse {:.6e} -> {}",
                summary.final_train_mse,
                summary.final_test_mse,
                out.display()
            );
            Ok(())
        }
        "compare" => {
            let mut flags = Flags(parse_flags(rest)?);
            let a = PathBuf::from(flags.require("run-a")?);
            let b = PathBuf::from(flags.require("run-b")?);
            let out = flags.take("out").map(PathBuf::from);
            flags.finish()?;
            let report = compare_runs(&a, &b, out.as_deref())?;
            println!(
                "median |MPE| test: a {:.5} vs b {:.5}; within {:.2} threshold: a {:.1}% vs b {:.1}%",
                report.a.median_abs_mpe_test,
                report.b.median_abs_mpe_test,
                crate::compare::MCMPE,
                report.a.frac_within_mcmpe_test * 100.0,
                report.b.frac_within_mcmpe_test * 100.0,
            );
            Ok(())
        }
        "demo-location" => {
            let mut flags = Flags(parse_flags(rest)?);
            let out = PathBuf::from(flags.require("out")?);
            flags.finish()?;
            let r = run_demo_location(&out)?;
            println!(
                "scalar route: {:.4} (abs err {:.4}); image route: {:.4} (abs err {:.4}); gt {:.4}",
                r.sbmlm_prediction, r.sbmlm_abs_error, r.ibmlm_prediction, r.ibmlm_abs_error, r.gt_max
            );
            Ok(())
        }
        "export-fields" => {
            let mut flags = Flags(parse_flags(rest)?);
            let run = PathBuf::from(flags.require("run")?);
            let out = PathBuf::from(flags.require("out")?);
            let ordinals: Vec<u32> = flags
                .require("ordinals")?
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| usage_err(format!("bad ordinal {s:?}"))))
                .collect::<Result<_>>()?;
            let norm = match flags.take("normalization") {
                None => ExportNormalization::PerImage,
                Some(v) => ExportNormalization::parse(&v)?,
            };
            flags.finish()?;
            export_fields(&run, &ordinals, norm, &out)?;
            println!("exported {} field triples to {}", ordinals.len(), out.display());
            Ok(())
        }
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            Ok(())
        }
        other => Err(usage_err(format!("unknown command {other:?}"))),
    }
}

/// Train config resolution order: preset defaults, then a config file, then
/// individual flags.
fn build_train_config(flags: &mut Flags) -> Result<ExperimentConfig> {
    let file_config = match flags.take("config") {
        Some(path) => Some(ExperimentConfig::from_kv(&std::fs::read_to_string(path)?)?),
        None => None,
    };
    let preset = flags.take("preset");
    let mut config = if let Some(c) = file_config {
        if preset.is_some() {
            return Err(usage_err("--preset and --config are mutually exclusive"));
        }
        c
    } else {
        let model = ModelKind::parse(&flags.require("model")?)?;
        let task = TaskKind::parse(&flags.require("task")?)?;
        let out = PathBuf::from(flags.require("out")?);
        match preset.as_deref() {
            None | Some("small") => ExperimentConfig::preset_small(model, task, out),
            Some("full") => ExperimentConfig::preset_full(model, task, out),
            Some(other) => return Err(usage_err(format!("unknown preset {other:?}"))),
        }
    };
    if let Some(v) = flags.take("model") {
        config.model = ModelKind::parse(&v)?;
    }
    if let Some(v) = flags.take("task") {
        config.task = TaskKind::parse(&v)?;
    }
    if let Some(v) = flags.take_parsed("seed")? {
        config.seed = v;
    }
    if let Some(v) = flags.take_parsed("epochs")? {
        config.epochs = v;
    }
    if let Some(v) = flags.take_parsed("batch-size")? {
        config.batch_size = v;
    }
    if let Some(v) = flags.take_parsed("learning-rate")? {
        config.learning_rate = v;
    }
    if let Some(v) = flags.take_parsed("width-multiplier")? {
        config.width_multiplier = v;
    }
    if let Some(v) = flags.take_parsed("eval-cadence")? {
        config.eval_cadence = v;
    }
    if let Some(v) = flags.take_parsed("split-seed")? {
        config.split_seed = v;
    }
    if let Some(v) = flags.take("dataset") {
        config.dataset = DatasetSource::File(PathBuf::from(v));
    }
    if let Some(v) = flags.take_parsed("bf-stride")? {
        config.dataset = DatasetSource::Generate { bf_stride: v };
    }
    if let Some(v) = flags.take("out") {
        config.out_dir = PathBuf::from(v);
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn usage_errors() {
        assert_eq!(exit_code(&dispatch(&argv("bogus")).unwrap_err()), 2);
        assert_eq!(exit_code(&dispatch(&argv("train --model mlp")).unwrap_err()), 2);
        assert_eq!(
            exit_code(&dispatch(&argv("dataset build --out /tmp/x --nope 1")).unwrap_err()),
            2
        );
    }

    #[test]
    fn exit_code_mapping() {
        assert_eq!(exit_code(&Error::Format { context: "config", detail: String::new() }), 3);
        assert_eq!(
            exit_code(&Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "x"))),
            4
        );
        assert_eq!(exit_code(&Error::NanLoss { epoch: 1, batch: 0, learning_rate: 1.0 }), 5);
        assert_eq!(exit_code(&Error::TapeConsumed), 1);
    }

    #[test]
    fn train_flag_overrides() {
        let mut flags = Flags(
            parse_flags(&argv(
                "--model mlp --task interpolation --out /tmp/r --epochs 7 --seed 3 --bf-stride 10",
            ))
            .unwrap(),
        );
        let config = build_train_config(&mut flags).unwrap();
        flags.finish().unwrap();
        assert_eq!(config.model, ModelKind::Mlp);
        assert_eq!(config.epochs, 7);
        assert_eq!(config.seed, 3);
        assert_eq!(config.dataset, DatasetSource::Generate { bf_stride: 10 });
    }
}
