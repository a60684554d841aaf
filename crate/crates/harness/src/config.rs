//! Experiment configuration: presets, flag values, and the UTF-8 key=value
//! serialization used for config files and run manifests.

use crate::digest::fnv1a;
use stampnet_core::{Error, Result};
use std::fmt;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mlp,
    ResSeUnet,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "res_se_unet" => Ok(ModelKind::ResSeUnet),
            other => Err(Error::Format {
                context: "config.model",
                detail: format!("expected mlp|res_se_unet, got {other}"),
            }),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mlp => "mlp",
            ModelKind::ResSeUnet => "res_se_unet",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Interpolation,
    Extrapolation,
}

impl TaskKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "interpolation" => Ok(TaskKind::Interpolation),
            "extrapolation" => Ok(TaskKind::Extrapolation),
            other => Err(Error::Format {
                context: "config.task",
                detail: format!("expected interpolation|extrapolation, got {other}"),
            }),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Interpolation => "interpolation",
            TaskKind::Extrapolation => "extrapolation",
        })
    }
}

/// Where samples come from: a dataset file or on-the-fly generation keeping
/// every `bf_stride`-th binder force.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    File(PathBuf),
    Generate { bf_stride: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub task: TaskKind,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub width_multiplier: f64,
    pub eval_cadence: usize,
    /// Seed of the shuffled interpolation split; shared across runs that are
    /// meant to be compared.
    pub split_seed: u64,
    pub dataset: DatasetSource,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Full-scale settings: 8,000 epochs on interpolation, 4,000 on
    /// extrapolation, batch 54, full width, the complete 1,080-sample space.
    pub fn preset_full(model: ModelKind, task: TaskKind, out_dir: PathBuf) -> Self {
        ExperimentConfig {
            model,
            task,
            seed: 1,
            epochs: match task {
                TaskKind::Interpolation => 8000,
                TaskKind::Extrapolation => 4000,
            },
            batch_size: 54,
            learning_rate: 1e-3,
            width_multiplier: 1.0,
            eval_cadence: 10,
            split_seed: 1,
            dataset: DatasetSource::Generate { bf_stride: 1 },
            out_dir,
        }
    }

    /// Desk-scale settings: width multiplier 1/16, batch 9, the 270-sample
    /// subset (every 4th binder force), and the same 2:1 interpolation/
    /// extrapolation epoch ratio as the full protocol.
    pub fn preset_small(model: ModelKind, task: TaskKind, out_dir: PathBuf) -> Self {
        ExperimentConfig {
            model,
            task,
            seed: 1,
            epochs: match task {
                TaskKind::Interpolation => 40,
                TaskKind::Extrapolation => 20,
            },
            batch_size: 9,
            learning_rate: 1e-3,
            width_multiplier: 0.0625,
            eval_cadence: 10,
            split_seed: 1,
            dataset: DatasetSource::Generate { bf_stride: 4 },
            out_dir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Format {
                context: "config",
                detail: format!(
                    "epochs ({}) and batch_size ({}) must be >= 1",
                    self.epochs, self.batch_size
                ),
            });
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Format {
                context: "config",
                detail: format!("learning_rate {} must be finite and >= 0", self.learning_rate),
            });
        }
        if !(self.width_multiplier > 0.0) {
            return Err(Error::Format {
                context: "config",
                detail: format!("width_multiplier {} must be positive", self.width_multiplier),
            });
        }
        if let DatasetSource::Generate { bf_stride } = self.dataset {
            if bf_stride == 0 || bf_stride > 20 {
                return Err(Error::Format {
                    context: "config",
                    detail: format!("bf_stride {bf_stride} must be in 1..=20"),
                });
            }
        }
        Ok(())
    }

    /// Canonical key=value serialization (stable key order, one per line).
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        push("model", self.model.to_string());
        push("task", self.task.to_string());
        push("seed", self.seed.to_string());
        push("epochs", self.epochs.to_string());
        push("batch_size", self.batch_size.to_string());
        push("learning_rate", self.learning_rate.to_string());
        push("width_multiplier", self.width_multiplier.to_string());
        push("eval_cadence", self.eval_cadence.to_string());
        push("split_seed", self.split_seed.to_string());
        match &self.dataset {
            DatasetSource::File(p) => push("dataset_path", p.display().to_string()),
            DatasetSource::Generate { bf_stride } => push("dataset_bf_stride", bf_stride.to_string()),
        }
        push("out_dir", self.out_dir.display().to_string());
        out
    }

    /// Parse the key=value form. Unknown keys are rejected; `#` lines and
    /// blank lines are ignored.
    pub fn from_kv(text: &str) -> Result<Self> {
        let bad = |detail: String| Error::Format { context: "config", detail };
        let mut model = None;
        let mut task = None;
        let mut seed = 1u64;
        let mut epochs = None;
        let mut batch_size = None;
        let mut learning_rate = 1e-3;
        let mut width_multiplier = 1.0;
        let mut eval_cadence = 10usize;
        let mut split_seed = 1u64;
        let mut dataset = None;
        let mut out_dir = None;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value", ln + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let int = |v: &str, k: &str| -> Result<u64> {
                v.parse().map_err(|_| bad(format!("{k}: bad integer {v:?}")))
            };
            let float = |v: &str, k: &str| -> Result<f64> {
                v.parse().map_err(|_| bad(format!("{k}: bad number {v:?}")))
            };
            match k {
                "model" => model = Some(ModelKind::parse(v)?),
                "task" => task = Some(TaskKind::parse(v)?),
                "seed" => seed = int(v, k)?,
                "epochs" => epochs = Some(int(v, k)? as usize),
                "batch_size" => batch_size = Some(int(v, k)? as usize),
                "learning_rate" => learning_rate = float(v, k)?,
                "width_multiplier" => width_multiplier = float(v, k)?,
                "eval_cadence" => eval_cadence = int(v, k)? as usize,
                "split_seed" => split_seed = int(v, k)?,
                "dataset_path" => dataset = Some(DatasetSource::File(PathBuf::from(v))),
                "dataset_bf_stride" => {
                    dataset = Some(DatasetSource::Generate { bf_stride: int(v, k)? as u32 })
                }
                "out_dir" => out_dir = Some(PathBuf::from(v)),
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        let config = ExperimentConfig {
            model: model.ok_or_else(|| bad("missing key: model".into()))?,
            task: task.ok_or_else(|| bad("missing key: task".into()))?,
            seed,
            epochs: epochs.ok_or_else(|| bad("missing key: epochs".into()))?,
            batch_size: batch_size.ok_or_else(|| bad("missing key: batch_size".into()))?,
            learning_rate,
            width_multiplier,
            eval_cadence,
            split_seed,
            dataset: dataset.ok_or_else(|| bad("missing dataset_path or dataset_bf_stride".into()))?,
            out_dir: out_dir.ok_or_else(|| bad("missing key: out_dir".into()))?,
        };
        config.validate()?;
        Ok(config)
    }

    /// Digest of the canonical serialization; embedded in checkpoints.
    pub fn digest(&self) -> u64 {
        fnv1a(self.to_kv().as_bytes())
    }
}
