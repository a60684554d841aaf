//! Network building blocks and the two surrogate architectures.

mod blocks;
mod mlp;
mod unet;

pub use blocks::{ResSeBlock, ResSeBlockConfig, SeBlock, SeBlockConfig};
pub use mlp::{Mlp, MlpConfig};
pub use unet::{SkipMode, Unet, UnetConfig, DOWN_CHAIN, INPUT_CHANNELS, INPUT_HW, OUTPUT_HW, UP_CHAIN};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{BatchNormState, BnMode, Tape, Var};
use crate::tensor::Tensor;

/// Ordered, named parameter tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Trainable parameters plus batch-norm running moments of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub params: ParamSet,
    pub bn: Vec<BatchNormState>,
}

/// Register every parameter on a tape, in `ParamSet` order.
pub fn register_params(tape: &mut Tape, params: &ParamSet, trainable: bool) -> Vec<Var> {
    params.tensors.iter().map(|t| tape.leaf(t.clone(), trainable)).collect()
}

/// He-uniform fan-in initialization: weights uniform in
/// `(-sqrt(6/fan_in), sqrt(6/fan_in))`, biases zero, BN gamma 1 / beta 0.
/// Fully determined by the seed and the parameter order.
pub(crate) struct Initializer {
    rng: Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer { rng: Rng::new(seed) }
    }

    pub fn weight(&mut self, params: &mut ParamSet, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let mut t = Tensor::zeros(shape);
        let bound = (6.0 / fan_in as f64).sqrt();
        t.fill_uniform(&mut self.rng, bound);
        params.push(name, t)
    }

    pub fn zeros(&mut self, params: &mut ParamSet, name: String, shape: Vec<usize>) -> usize {
        params.push(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, params: &mut ParamSet, name: String, shape: Vec<usize>) -> usize {
        params.push(name, Tensor::full(shape, 1.0))
    }
}

/// One conv (or transposed conv) unit with optional BN + ReLU, as wired into
/// the encoder/decoder stacks and residual blocks.
#[derive(Debug, Clone)]
pub(crate) struct ConvUnit {
    pub w: usize,
    pub b: usize,
    pub bn: Option<BnIndices>,
    pub relu: bool,
    pub geom: crate::conv::ConvGeometry,
    pub transposed: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BnIndices {
    pub gamma: usize,
    pub beta: usize,
    pub state: usize,
}

impl ConvUnit {
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        bn_states: &mut [BatchNormState],
        mode: BnMode,
        x: Var,
    ) -> Result<Var> {
        let mut y = if self.transposed {
            tape.conv2d_transpose(x, vars[self.w], vars[self.b], self.geom)?
        } else {
            tape.conv2d(x, vars[self.w], vars[self.b], self.geom)?
        };
        if let Some(bn) = self.bn {
            y = tape.batchnorm2d(y, vars[bn.gamma], vars[bn.beta], &mut bn_states[bn.state], mode)?;
        }
        if self.relu {
            y = tape.relu(y);
        }
        Ok(y)
    }
}

/// Validate that a freshly built model's materialized parameter count matches
/// the closed-form count implied by its configuration.
pub(crate) fn check_param_count(context: &'static str, expected: usize, params: &ParamSet) -> Result<()> {
    let actual = params.total_elements();
    if expected != actual {
        return Err(Error::InvalidGeometry {
            context,
            detail: format!("parameter count {actual} does not match configuration ({expected})"),
        });
    }
    Ok(())
}
