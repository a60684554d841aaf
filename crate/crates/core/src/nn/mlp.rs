//! The scalar baseline: a 6-hidden-layer MLP mapping normalized
//! `(geometry index, binder force, thickness)` to the field maximum.

use super::{check_param_count, Initializer, ModelState, ParamSet};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Hidden widths of the six hidden layers. The layer count is part of the
/// architecture, so it is fixed at the type level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpConfig {
    pub hidden_widths: [usize; 6],
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden_widths: [64, 128, 256, 256, 128, 64] }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidGeometry {
                context: "MlpConfig",
                detail: format!("hidden widths must be >= 1, got {:?}", self.hidden_widths),
            });
        }
        Ok(())
    }
}

struct LinearSpec {
    w: usize,
    b: usize,
}

/// Scalar surrogate: ReLU MLP with 3 inputs, 6 hidden layers, and an
/// activation-free regression output.
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<LinearSpec>,
    param_template: ParamSet,
}

pub(crate) const MLP_INPUTS: usize = 3;

impl Mlp {
    pub fn new(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        // The template records names/shapes; real states are seeded later.
        let (layers, params) = Self::build(&config, 0);
        let expected: usize = {
            let mut dims = vec![MLP_INPUTS];
            dims.extend_from_slice(&config.hidden_widths);
            dims.push(1);
            dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
        };
        check_param_count("Mlp::new", expected, &params)?;
        Ok(Mlp { config, layers, param_template: params })
    }

    fn build(config: &MlpConfig, seed: u64) -> (Vec<LinearSpec>, ParamSet) {
        let mut init = Initializer::new(seed);
        let mut params = ParamSet::new();
        let mut dims = vec![MLP_INPUTS];
        dims.extend_from_slice(&config.hidden_widths);
        dims.push(1);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let (n_in, n_out) = (d[0], d[1]);
                let w = init.weight(&mut params, format!("fc{i}.weight"), vec![n_out, n_in], n_in);
                let b = init.zeros(&mut params, format!("fc{i}.bias"), vec![n_out]);
                LinearSpec { w, b }
            })
            .collect();
        (layers, params)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn param_template(&self) -> &ParamSet {
        &self.param_template
    }

    pub fn init_state(&self, seed: u64) -> ModelState {
        let (_, params) = Self::build(&self.config, seed);
        ModelState { params, bn: Vec::new() }
    }

    /// `[B, 3] -> [B, 1]`: alternating linear/ReLU through the hidden layers,
    /// final layer linear.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<Var> {
        let (_, features) = tape.value(input).dims2("Mlp::forward input")?;
        if features != MLP_INPUTS {
            return Err(Error::ShapeMismatch {
                context: "Mlp::forward",
                left: tape.value(input).shape().to_vec(),
                right: vec![MLP_INPUTS],
            });
        }
        let mut x = input;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = tape.linear(x, vars[layer.w], vars[layer.b])?;
            if i < last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    /// Normalized inputs: `((geo - 14)/13, bf/5, (t - 1.25)/0.25)`.
    pub fn features(geo_index: u8, bf: f64, t: f64) -> [f64; 3] {
        [(geo_index as f64 - 14.0) / 13.0, bf / 5.0, (t - 1.25) / 0.25]
    }

    pub fn batch_features(rows: &[[f64; 3]]) -> Tensor {
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::from_vec_unchecked(vec![rows.len(), MLP_INPUTS], data)
    }
}
