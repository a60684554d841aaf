//! Linear-prior predictors over a two-sample training set: the scalar route
//! averages the field maxima, the image route averages the fields pixel-wise
//! and takes the maximum of the averaged field. By convexity of `max`, the
//! image route's prediction can never exceed the scalar route's.

use crate::dataset::{StrainField, OUTPUT_GRID};
use crate::error::{Error, Result};

/// Field maximum shared by both mirrored training samples.
pub const TRAIN_MAX: f64 = 0.7302;
/// Maximum of the pixel-wise mean of the training pair.
pub const MEAN_FIELD_MAX: f64 = 0.6838;
/// Ground-truth maximum of the held-out symmetric sample.
pub const GT_MAX: f64 = 0.6348;

/// Binder-force pairs of the two training samples and the test sample (MPa).
pub const TRAIN_FORCES: [[f64; 2]; 2] = [[1.0, 5.0], [5.0, 1.0]];
pub const TEST_FORCES: [f64; 2] = [3.0, 3.0];

/// Scalar-route prediction: the arithmetic mean of the training maxima.
pub fn sbmlm_linear_predict(train_maxima: &[f64]) -> Result<f64> {
    if train_maxima.is_empty() {
        return Err(Error::EmptyInput { context: "sbmlm_linear_predict" });
    }
    Ok(train_maxima.iter().sum::<f64>() / train_maxima.len() as f64)
}

/// Image-route prediction: the pixel-wise mean field and its maximum.
pub fn ibmlm_linear_predict(train_fields: &[StrainField]) -> Result<(StrainField, f64)> {
    if train_fields.is_empty() {
        return Err(Error::EmptyInput { context: "ibmlm_linear_predict" });
    }
    let n = train_fields.len() as f64;
    let mut mean = vec![0.0; OUTPUT_GRID * OUTPUT_GRID];
    for f in train_fields {
        for (acc, v) in mean.iter_mut().zip(f.data()) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= n;
    }
    let field = StrainField::new(mean)?;
    let max = field.max();
    Ok((field, max))
}

/// Mirror a field across its vertical center line.
pub fn mirror_columns(field: &StrainField) -> StrainField {
    let mut out = vec![0.0; OUTPUT_GRID * OUTPUT_GRID];
    for r in 0..OUTPUT_GRID {
        for c in 0..OUTPUT_GRID {
            out[r * OUTPUT_GRID + (OUTPUT_GRID - 1 - c)] = field.get(r, c);
        }
    }
    StrainField::new(out).expect("mirror preserves validity")
}

/// A mirrored pair of training fields plus a symmetric test field.
///
/// The fields are synthetic Gaussian bumps: both training peaks are
/// `TRAIN_MAX` at mirrored off-axis pixels, with the bump width tuned so the
/// mean field's maximum lands on `MEAN_FIELD_MAX`; the ground truth is the
/// symmetric mean-field shape rescaled to peak at `GT_MAX`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoCase {
    pub train_fields: [StrainField; 2],
    pub train_maxima: [f64; 2],
    pub gt_field: StrainField,
    pub gt_max: f64,
}

const BUMP_ROW: usize = 25;
const BUMP_COL_A: usize = 20;
const BUMP_COL_B: usize = OUTPUT_GRID - 1 - BUMP_COL_A;

fn bump_field(center_col: usize, u: f64, peak: f64) -> StrainField {
    let mut data = vec![0.0; OUTPUT_GRID * OUTPUT_GRID];
    for r in 0..OUTPUT_GRID {
        for c in 0..OUTPUT_GRID {
            let dr = r as f64 - BUMP_ROW as f64;
            let dc = c as f64 - center_col as f64;
            data[r * OUTPUT_GRID + c] = peak * (-(dr * dr + dc * dc) * u).exp();
        }
    }
    StrainField::new(data).expect("finite bump")
}

impl DemoCase {
    /// The reference mirror-pair case with the published maxima.
    pub fn reference() -> DemoCase {
        // Bisect the inverse bump width so the mean-field max matches.
        let target = MEAN_FIELD_MAX;
        let mean_max = |u: f64| {
            let a = bump_field(BUMP_COL_A, u, TRAIN_MAX);
            let b = bump_field(BUMP_COL_B, u, TRAIN_MAX);
            ibmlm_linear_predict(&[a, b]).expect("two fields").1
        };
        let (mut lo, mut hi) = (1e-4, 1e-2);
        debug_assert!(mean_max(lo) > target && mean_max(hi) < target);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mean_max(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < f64::EPSILON * lo {
                break;
            }
        }
        let u = 0.5 * (lo + hi);
        let a = bump_field(BUMP_COL_A, u, TRAIN_MAX);
        let b = bump_field(BUMP_COL_B, u, TRAIN_MAX);
        let (mean_field, mean_peak) = ibmlm_linear_predict(&[a.clone(), b.clone()]).expect("pair");
        // Ground truth: the symmetric mean-field shape rescaled to GT_MAX.
        let scale = GT_MAX / mean_peak;
        let gt_field = StrainField::new(mean_field.data().iter().map(|v| v * scale).collect())
            .expect("finite rescale");
        let gt_max = gt_field.max();
        DemoCase { train_fields: [a, b], train_maxima: [TRAIN_MAX, TRAIN_MAX], gt_field, gt_max }
    }

    /// The two training fields must be exact mirror images.
    pub fn validate(&self) -> Result<()> {
        if mirror_columns(&self.train_fields[0]) != self.train_fields[1] {
            return Err(Error::Format {
                context: "DemoCase::validate",
                detail: "training fields are not mirror images".into(),
            });
        }
        for (f, &m) in self.train_fields.iter().zip(&self.train_maxima) {
            if f.max() != m {
                return Err(Error::Format {
                    context: "DemoCase::validate",
                    detail: format!("recorded max {m} differs from field max {}", f.max()),
                });
            }
        }
        Ok(())
    }
}

/// Both predictions and their errors against the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub gt_max: f64,
    pub sbmlm_prediction: f64,
    pub sbmlm_abs_error: f64,
    /// Fraction of the ground truth, not a percentage.
    pub sbmlm_rel_error: f64,
    pub ibmlm_prediction: f64,
    pub ibmlm_abs_error: f64,
    pub ibmlm_rel_error: f64,
    pub pd_field: StrainField,
}

pub fn demo_report(case: &DemoCase) -> Result<DemoReport> {
    case.validate()?;
    let sbmlm = sbmlm_linear_predict(&case.train_maxima)?;
    let (pd_field, ibmlm) = ibmlm_linear_predict(&case.train_fields)?;
    Ok(DemoReport {
        gt_max: case.gt_max,
        sbmlm_prediction: sbmlm,
        sbmlm_abs_error: (sbmlm - case.gt_max).abs(),
        sbmlm_rel_error: (sbmlm - case.gt_max).abs() / case.gt_max,
        ibmlm_prediction: ibmlm,
        ibmlm_abs_error: (ibmlm - case.gt_max).abs(),
        ibmlm_rel_error: (ibmlm - case.gt_max).abs() / case.gt_max,
        pd_field,
    })
}
