//! Deterministic closed-form strain-field generator.
//!
//! A stand-in for FEA ground truth with the same qualitative structure:
//! strain concentrates along the footprint outline, grows with binder force
//! and thins with thickness, and a low binder force adds an oscillatory
//! wrinkle band around the outline.

use super::design::{DesignPoint, GeometrySpec};
use super::footprint::Footprint;
use super::{StrainField, OUTPUT_GRID, PIXEL_PITCH};

pub const BASE_STRAIN: f64 = 0.05;
pub const OUTLINE_AMPLITUDE: f64 = 0.45;
pub const OUTLINE_WIDTH_MM: f64 = 8.0;
pub const WRINKLE_AMPLITUDE: f64 = 0.12;
pub const WRINKLE_WAVELENGTH_MM: f64 = 8.0;
pub const WRINKLE_WIDTH_MM: f64 = 12.0;
/// Binder force (MPa) at and above which the wrinkle term vanishes.
pub const WRINKLE_CUTOFF_MPA: f64 = 1.5;

/// Strain at signed distance `d` (mm) from the outline, clamped at zero:
/// a Gaussian outline ridge scaled by `sqrt(bf/5) / t` plus a damped
/// sinusoidal wrinkle active below 1.5 MPa.
pub fn strain_value(d: f64, bf: f64, t: f64) -> f64 {
    let ridge = OUTLINE_AMPLITUDE
        * (-(d / OUTLINE_WIDTH_MM) * (d / OUTLINE_WIDTH_MM)).exp()
        * (bf / 5.0).sqrt()
        * (1.0 / t);
    let wrinkle = WRINKLE_AMPLITUDE
        * (1.0 - bf / WRINKLE_CUTOFF_MPA).max(0.0)
        * (2.0 * std::f64::consts::PI * d / WRINKLE_WAVELENGTH_MM).sin()
        * (-(d / WRINKLE_WIDTH_MM) * (d / WRINKLE_WIDTH_MM)).exp();
    (BASE_STRAIN + ridge + wrinkle).max(0.0)
}

/// Evaluate the field on the 50x50 output grid (pixel centers at
/// `(i + 0.5) * 1.4` mm).
pub fn oracle_strain_field(design: &DesignPoint, spec: &GeometrySpec) -> StrainField {
    let fp = Footprint::new(design, spec);
    let mut data = vec![0.0; OUTPUT_GRID * OUTPUT_GRID];
    for row in 0..OUTPUT_GRID {
        let y = (row as f64 + 0.5) * PIXEL_PITCH;
        for col in 0..OUTPUT_GRID {
            let x = (col as f64 + 0.5) * PIXEL_PITCH;
            let d = fp.signed_distance(x, y);
            data[row * OUTPUT_GRID + col] = strain_value(d, design.bf, design.t);
        }
    }
    StrainField { data }
}
