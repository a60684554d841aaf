//! Design-space enumeration, input rasterization, the synthetic strain-field
//! oracle, dataset splits, and the on-disk dataset format.

mod design;
mod footprint;
mod io;
mod oracle;
mod raster;
mod split;

pub use design::{
    enumerate_design_space, geo_index_to_radii, radii_to_geo_index, subset_every_kth_bf,
    DesignPoint, GeometrySpec, BF_COUNT, GEO_COUNT, THICKNESS_VALUES,
};
pub use footprint::Footprint;
pub use io::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use oracle::{oracle_strain_field, strain_value};
pub use raster::rasterize_inputs;
pub use split::{split_extrapolation, split_interpolation, HasOrdinal};

use crate::error::{Error, Result};
use crate::optim::TrainSample;
use crate::par::run_tasks;
use crate::tensor::Tensor;

/// Input image side length (pixels).
pub const INPUT_GRID: usize = 199;
/// Strain-field side length (pixels).
pub const OUTPUT_GRID: usize = 50;
/// Blank side length (mm).
pub const BLANK_SIDE: f64 = 70.0;
/// Output pixel pitch (mm); `OUTPUT_GRID * PIXEL_PITCH == BLANK_SIDE`.
pub const PIXEL_PITCH: f64 = 1.4;

/// 3-channel 199x199 rasterized design parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct InputStack(Tensor);

impl InputStack {
    pub(crate) fn from_tensor(t: Tensor) -> Self {
        debug_assert_eq!(t.shape(), &[3, INPUT_GRID, INPUT_GRID]);
        InputStack(t)
    }

    pub fn new(t: Tensor) -> Result<Self> {
        if t.shape() != [3, INPUT_GRID, INPUT_GRID] {
            return Err(Error::ShapeMismatch {
                context: "InputStack::new",
                left: t.shape().to_vec(),
                right: vec![3, INPUT_GRID, INPUT_GRID],
            });
        }
        Ok(InputStack(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.0.data()[c * INPUT_GRID * INPUT_GRID..(c + 1) * INPUT_GRID * INPUT_GRID]
    }
}

/// 50x50 plastic-strain image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StrainField {
    data: Vec<f64>,
}

impl StrainField {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.len() != OUTPUT_GRID * OUTPUT_GRID {
            return Err(Error::ElementCount {
                shape: vec![OUTPUT_GRID, OUTPUT_GRID],
                expected: OUTPUT_GRID * OUTPUT_GRID,
                got: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "StrainField::new" });
        }
        Ok(StrainField { data })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * OUTPUT_GRID + col]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec_unchecked(vec![OUTPUT_GRID, OUTPUT_GRID], self.data.clone())
    }

    /// As a `[1, 50, 50]` training target.
    pub fn to_target(&self) -> Tensor {
        Tensor::from_vec_unchecked(vec![1, OUTPUT_GRID, OUTPUT_GRID], self.data.clone())
    }

    pub fn transposed(&self) -> StrainField {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..OUTPUT_GRID {
            for c in 0..OUTPUT_GRID {
                out[c * OUTPUT_GRID + r] = self.data[r * OUTPUT_GRID + c];
            }
        }
        StrainField { data: out }
    }
}

/// One dataset sample: the design scalars, their rasterization, and the
/// oracle ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub design: DesignPoint,
    pub input: InputStack,
    pub target: StrainField,
    max_peeq: f64,
}

impl Sample {
    pub fn new(design: DesignPoint, input: InputStack, target: StrainField) -> Self {
        let max_peeq = target.max();
        Sample { design, input, target, max_peeq }
    }

    /// Maximum of the target field.
    pub fn max_peeq(&self) -> f64 {
        self.max_peeq
    }

    /// Build the full sample (rasterization + oracle field) for one design.
    pub fn generate(design: DesignPoint, spec: &GeometrySpec) -> Self {
        let input = rasterize_inputs(&design, spec);
        let target = oracle_strain_field(&design, spec);
        Sample::new(design, input, target)
    }

    /// Image-surrogate training pair: `[3,199,199] -> [1,50,50]`.
    pub fn unet_sample(&self) -> TrainSample {
        TrainSample { input: self.input.tensor().clone(), target: self.target.to_target() }
    }

    /// Scalar-surrogate training pair: normalized design scalars -> field max.
    pub fn mlp_sample(&self) -> TrainSample {
        let f = crate::nn::Mlp::features(self.design.geo_index, self.design.bf, self.design.t);
        TrainSample {
            input: Tensor::from_vec_unchecked(vec![3], f.to_vec()),
            target: Tensor::from_vec_unchecked(vec![1], vec![self.max_peeq]),
        }
    }
}

impl HasOrdinal for Sample {
    fn ordinal(&self) -> u32 {
        self.design.ordinal
    }
}

/// Generate samples for the given designs, in parallel, assembled in input
/// order regardless of completion order.
pub fn generate_samples(designs: &[DesignPoint], spec: &GeometrySpec) -> Vec<Sample> {
    let mut out: Vec<Option<Sample>> = vec![None; designs.len()];
    let tasks: Vec<(usize, &mut [Option<Sample>])> = out
        .chunks_mut(8)
        .enumerate()
        .map(|(i, c)| (i * 8, c))
        .collect();
    run_tasks(tasks, |_, (first, slots)| {
        for (off, slot) in slots.iter_mut().enumerate() {
            *slot = Some(Sample::generate(designs[first + off].clone(), spec));
        }
    });
    out.into_iter().map(|s| s.expect("all slots filled")).collect()
}
