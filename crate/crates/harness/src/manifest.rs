//! Run manifests: the experiment configuration plus a content digest for
//! every artifact the run wrote, in a stable line-oriented key=value form.

use crate::config::ExperimentConfig;
use crate::digest::fnv1a_file;
use stampnet_core::{Error, Result};
use std::path::Path;

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub dataset_count: usize,
    pub dataset_digest: u64,
    pub train_count: usize,
    pub test_count: usize,
    /// (file name, content digest), in write order.
    pub artifacts: Vec<(String, u64)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::from("manifest_version=1\n");
        for line in self.config.to_kv().lines() {
            out.push_str("config.");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(&format!("dataset.count={}\n", self.dataset_count));
        out.push_str(&format!("dataset.digest={:016x}\n", self.dataset_digest));
        out.push_str(&format!("split.train={}\n", self.train_count));
        out.push_str(&format!("split.test={}\n", self.test_count));
        for (name, digest) in &self.artifacts {
            out.push_str(&format!("artifact.{name}={digest:016x}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Manifest> {
        let bad = |detail: String| Error::Format { context: "manifest", detail };
        let mut config_lines = String::new();
        let mut dataset_count = None;
        let mut dataset_digest = None;
        let mut train_count = None;
        let mut test_count = None;
        let mut artifacts = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line == "manifest_version=1" {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad line {line:?}")))?;
            if let Some(ck) = k.strip_prefix("config.") {
                config_lines.push_str(ck);
                config_lines.push('=');
                config_lines.push_str(v);
                config_lines.push('\n');
            } else if let Some(name) = k.strip_prefix("artifact.") {
                let digest =
                    u64::from_str_radix(v, 16).map_err(|_| bad(format!("bad digest {v:?}")))?;
                artifacts.push((name.to_string(), digest));
            } else {
                match k {
                    "dataset.count" => dataset_count = v.parse().ok(),
                    "dataset.digest" => dataset_digest = u64::from_str_radix(v, 16).ok(),
                    "split.train" => train_count = v.parse().ok(),
                    "split.test" => test_count = v.parse().ok(),
                    other => return Err(bad(format!("unknown key {other:?}"))),
                }
            }
        }
        Ok(Manifest {
            config: ExperimentConfig::from_kv(&config_lines)?,
            dataset_count: dataset_count.ok_or_else(|| bad("missing dataset.count".into()))?,
            dataset_digest: dataset_digest.ok_or_else(|| bad("missing dataset.digest".into()))?,
            train_count: train_count.ok_or_else(|| bad("missing split.train".into()))?,
            test_count: test_count.ok_or_else(|| bad("missing split.test".into()))?,
            artifacts,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_NAME), self.to_text())?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
        Manifest::from_text(&text)
    }

    /// Splits must agree for two runs to be comparable.
    pub fn same_split(&self, other: &Manifest) -> bool {
        self.config.task == other.config.task
            && self.config.split_seed == other.config.split_seed
            && self.dataset_digest == other.dataset_digest
            && self.train_count == other.train_count
            && self.test_count == other.test_count
    }
}

/// Recompute every artifact digest listed in a run's manifest and compare.
pub fn verify_run_dir(dir: &Path) -> Result<()> {
    let manifest = Manifest::read(dir)?;
    for (name, recorded) in &manifest.artifacts {
        let actual = fnv1a_file(&dir.join(name))?;
        if actual != *recorded {
            return Err(Error::Format {
                context: "manifest",
                detail: format!("artifact {name} digest {actual:016x} != recorded {recorded:016x}"),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelKind, TaskKind};

    fn sample() -> Manifest {
        Manifest {
            config: ExperimentConfig::preset_small(
                ModelKind::Mlp,
                TaskKind::Interpolation,
                "/tmp/x".into(),
            ),
            dataset_count: 270,
            dataset_digest: 0xdead_beef,
            train_count: 243,
            test_count: 27,
            artifacts: vec![("metrics.csv".into(), 0x1234), ("model.sfsm".into(), 0x5678)],
        }
    }

    #[test]
    fn text_round_trip() {
        let m = sample();
        assert_eq!(Manifest::from_text(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn split_comparability() {
        let a = sample();
        let mut b = sample();
        b.config.model = ModelKind::ResSeUnet;
        b.config.seed = 9;
        assert!(a.same_split(&b), "model/seed do not affect the split");
        b.config.split_seed = 2;
        assert!(!a.same_split(&b));
        let mut c = sample();
        c.dataset_digest = 1;
        assert!(!a.same_split(&c));
    }

    #[test]
    fn verify_detects_drift() {
        let dir = std::env::temp_dir().join("stampnet-manifest-test");
        std::fs::create_dir_all(&dir).unwrap();
        let file = dir.join("metrics.csv");
        std::fs::write(&file, b"epoch,mse\r\n1,0.5\r\n").unwrap();
        let mut m = sample();
        m.artifacts = vec![("metrics.csv".into(), crate::digest::fnv1a_file(&file).unwrap())];
        m.write(&dir).unwrap();
        verify_run_dir(&dir).unwrap();
        std::fs::write(&file, b"tampered").unwrap();
        assert!(verify_run_dir(&dir).is_err());
    }
}
