//! Rasterize design scalars into the 3-channel input image.

use super::design::{DesignPoint, GeometrySpec};
use super::footprint::Footprint;
use super::{InputStack, BLANK_SIDE, INPUT_GRID};
use crate::tensor::Tensor;

/// Signed distances are clamped to this band (mm) before scaling to [-1, 1].
pub const SDF_CLAMP_MM: f64 = 20.0;

/// Channel 0: clamped/scaled signed distance to the footprint outline.
/// Channel 1: constant `bf / 5`. Channel 2: constant `(t - 1.25) / 0.25`.
/// Pixel centers sit at `((i + 0.5) * 70 / 199, (j + 0.5) * 70 / 199)`.
pub fn rasterize_inputs(design: &DesignPoint, spec: &GeometrySpec) -> InputStack {
    let fp = Footprint::new(design, spec);
    let n = INPUT_GRID * INPUT_GRID;
    let mut data = vec![0.0; 3 * n];
    let pitch = BLANK_SIDE / INPUT_GRID as f64;
    for row in 0..INPUT_GRID {
        let y = (row as f64 + 0.5) * pitch;
        for col in 0..INPUT_GRID {
            let x = (col as f64 + 0.5) * pitch;
            let d = fp.signed_distance(x, y);
            data[row * INPUT_GRID + col] = d.clamp(-SDF_CLAMP_MM, SDF_CLAMP_MM) / SDF_CLAMP_MM;
        }
    }
    data[n..2 * n].fill(design.bf / 5.0);
    data[2 * n..].fill((design.t - 1.25) / 0.25);
    InputStack::from_tensor(Tensor::from_vec_unchecked(
        vec![3, INPUT_GRID, INPUT_GRID],
        data,
    ))
}
