//! Cross-run comparison: MPE statistics, the MCMPE acceptance fraction, and
//! final LMSE values, with a guard against comparing incompatible splits.

use crate::csvio::{column_f64, read_csv, write_csv};
use crate::manifest::Manifest;
use crate::runner::{METRICS_CSV, MPE_TEST_CSV, MPE_TRAIN_CSV};
use stampnet_core::{Error, Result};
use std::path::Path;

/// Maximum acceptable |MPE|.
pub const MCMPE: f64 = 0.04;

#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub median_abs_mpe_test: f64,
    pub max_abs_mpe_test: f64,
    pub frac_within_mcmpe_test: f64,
    pub median_abs_mpe_train: f64,
    pub final_train_lmse: Option<f64>,
    pub final_test_lmse: Option<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn abs_all(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.abs()).collect()
}

pub fn stats_for_run(dir: &Path) -> Result<RunStats> {
    let (h_test, r_test) = read_csv(&dir.join(MPE_TEST_CSV))?;
    let test_mpe = column_f64(&h_test, &r_test, "mpe")?;
    let (h_train, r_train) = read_csv(&dir.join(MPE_TRAIN_CSV))?;
    let train_mpe = column_f64(&h_train, &r_train, "mpe")?;
    if test_mpe.is_empty() || train_mpe.is_empty() {
        return Err(Error::EmptyInput { context: "stats_for_run" });
    }
    let (h_m, r_m) = read_csv(&dir.join(METRICS_CSV))?;
    let train_lmse = column_f64(&h_m, &r_m, "train_lmse")?;
    let test_lmse = column_f64(&h_m, &r_m, "test_lmse")?;
    let abs_test = abs_all(&test_mpe);
    let within = abs_test.iter().filter(|&&m| m <= MCMPE).count();
    Ok(RunStats {
        median_abs_mpe_test: median(&abs_test),
        max_abs_mpe_test: abs_test.iter().copied().fold(0.0, f64::max),
        frac_within_mcmpe_test: within as f64 / abs_test.len() as f64,
        median_abs_mpe_train: median(&abs_all(&train_mpe)),
        final_train_lmse: train_lmse.last().copied(),
        final_test_lmse: test_lmse.last().copied(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub a: RunStats,
    pub b: RunStats,
}

/// Compare two runs evaluated on the same split definition; refuses
/// mismatched splits since the statistics would not be comparable.
pub fn compare_runs(run_a: &Path, run_b: &Path, out_csv: Option<&Path>) -> Result<ComparisonReport> {
    let ma = Manifest::read(run_a)?;
    let mb = Manifest::read(run_b)?;
    if !ma.same_split(&mb) {
        return Err(Error::Format {
            context: "compare_runs",
            detail: "runs use different splits (task, split seed, or dataset differ)".into(),
        });
    }
    let a = stats_for_run(run_a)?;
    let b = stats_for_run(run_b)?;
    if let Some(path) = out_csv {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let rows = vec![
            row("median_abs_mpe_test", a.median_abs_mpe_test, b.median_abs_mpe_test),
            row("max_abs_mpe_test", a.max_abs_mpe_test, b.max_abs_mpe_test),
            row("frac_within_mcmpe_test", a.frac_within_mcmpe_test, b.frac_within_mcmpe_test),
            row("median_abs_mpe_train", a.median_abs_mpe_train, b.median_abs_mpe_train),
            vec![
                "final_train_lmse".into(),
                fmt(a.final_train_lmse),
                fmt(b.final_train_lmse),
                fmt(a.final_train_lmse.zip(b.final_train_lmse).map(|(x, y)| x - y)),
            ],
            vec![
                "final_test_lmse".into(),
                fmt(a.final_test_lmse),
                fmt(b.final_test_lmse),
                fmt(a.final_test_lmse.zip(b.final_test_lmse).map(|(x, y)| x - y)),
            ],
        ];
        write_csv(path, &["metric", "run_a", "run_b", "a_minus_b"], &rows)?;
    }
    Ok(ComparisonReport { a, b })
}

fn row(name: &str, a: f64, b: f64) -> Vec<String> {
    vec![name.to_string(), a.to_string(), b.to_string(), (a - b).to_string()]
}
