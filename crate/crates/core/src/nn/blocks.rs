//! Squeeze-excitation and residual SE blocks.
//!
//! The SE block here follows the additive variant: the excitation vector is
//! broadcast over the spatial extent and *added* to the feature map
//! (`v = u + e`), not multiplied channel-wise.

use super::{BnIndices, ConvUnit, Initializer, ParamSet};
use crate::conv::ConvGeometry;
use crate::error::{Error, Result};
use crate::tape::{BatchNormState, BnMode, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeBlockConfig {
    pub channels: usize,
    /// Reduction ratio between the two fully connected stages.
    pub reduction: usize,
}

impl SeBlockConfig {
    pub fn new(channels: usize, reduction: usize) -> Result<Self> {
        if channels == 0 || reduction == 0 {
            return Err(Error::InvalidGeometry {
                context: "SeBlockConfig",
                detail: format!("channels {channels} and reduction {reduction} must be >= 1"),
            });
        }
        Ok(SeBlockConfig { channels, reduction })
    }

    /// Width of the squeezed stage; floors to at least one unit when the
    /// channel count is below the reduction ratio.
    pub fn hidden(&self) -> usize {
        (self.channels / self.reduction).max(1)
    }
}

/// Squeeze (global average pool), excite (FC+ReLU then FC+Sigmoid), then add
/// the per-channel excitation back onto the feature map.
#[derive(Debug, Clone)]
pub struct SeBlock {
    config: SeBlockConfig,
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
}

impl SeBlock {
    pub(crate) fn build(config: SeBlockConfig, prefix: &str, init: &mut Initializer, params: &mut ParamSet) -> Self {
        let (c, h) = (config.channels, config.hidden());
        SeBlock {
            config,
            fc1_w: init.weight(params, format!("{prefix}.fc1.weight"), vec![h, c], c),
            fc1_b: init.zeros(params, format!("{prefix}.fc1.bias"), vec![h]),
            fc2_w: init.weight(params, format!("{prefix}.fc2.weight"), vec![c, h], h),
            fc2_b: init.zeros(params, format!("{prefix}.fc2.bias"), vec![c]),
        }
    }

    pub(crate) fn param_elements(config: &SeBlockConfig) -> usize {
        let (c, h) = (config.channels, config.hidden());
        h * c + h + c * h + c
    }

    pub fn config(&self) -> &SeBlockConfig {
        &self.config
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], u: Var) -> Result<Var> {
        let (_, c, h, w) = tape.value(u).dims4("SeBlock::forward input")?;
        if c != self.config.channels {
            return Err(Error::ShapeMismatch {
                context: "SeBlock::forward",
                left: vec![c],
                right: vec![self.config.channels],
            });
        }
        let squeezed = tape.global_avg_pool(u)?;
        let p = tape.linear(squeezed, vars[self.fc1_w], vars[self.fc1_b])?;
        let p = tape.relu(p);
        let q = tape.linear(p, vars[self.fc2_w], vars[self.fc2_b])?;
        let q = tape.sigmoid(q);
        let e = tape.broadcast_channels(q, h, w)?;
        tape.add(u, e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResSeBlockConfig {
    pub channels: usize,
    pub se_reduction: usize,
}

/// Two 3x3 conv+BN+ReLU stages and an SE block inside an outer residual
/// addition: `y = x + relu(se(conv_bn_relu(conv_bn_relu(x))))`. Shape
/// preserving by construction.
#[derive(Debug, Clone)]
pub struct ResSeBlock {
    conv1: ConvUnit,
    conv2: ConvUnit,
    se: SeBlock,
}

impl ResSeBlock {
    pub(crate) fn build(
        config: ResSeBlockConfig,
        prefix: &str,
        init: &mut Initializer,
        params: &mut ParamSet,
        bn_count: &mut usize,
    ) -> Result<Self> {
        let c = config.channels;
        let geom = ConvGeometry::new((3, 3), (1, 1), (1, 1))?;
        let conv = |tag: &str, init: &mut Initializer, params: &mut ParamSet, bn_count: &mut usize| {
            let w = init.weight(params, format!("{prefix}.{tag}.weight"), vec![c, c, 3, 3], c * 9);
            let b = init.zeros(params, format!("{prefix}.{tag}.bias"), vec![c]);
            let gamma = init.ones(params, format!("{prefix}.{tag}.bn.gamma"), vec![c]);
            let beta = init.zeros(params, format!("{prefix}.{tag}.bn.beta"), vec![c]);
            let state = *bn_count;
            *bn_count += 1;
            ConvUnit {
                w,
                b,
                bn: Some(BnIndices { gamma, beta, state }),
                relu: true,
                geom,
                transposed: false,
            }
        };
        let conv1 = conv("conv1", init, params, bn_count);
        let conv2 = conv("conv2", init, params, bn_count);
        let se = SeBlock::build(
            SeBlockConfig::new(c, config.se_reduction)?,
            &format!("{prefix}.se"),
            init,
            params,
        );
        Ok(ResSeBlock { conv1, conv2, se })
    }

    pub(crate) fn param_elements(config: &ResSeBlockConfig) -> usize {
        let c = config.channels;
        let one_conv = c * c * 9 + c + 2 * c;
        let se = SeBlockConfig { channels: c, reduction: config.se_reduction };
        2 * one_conv + SeBlock::param_elements(&se)
    }

    /// Build a free-standing block with its own seeded parameter set.
    /// Returns the block, its parameters, and the number of BN states needed.
    pub fn standalone(config: ResSeBlockConfig, seed: u64) -> Result<(Self, ParamSet, usize)> {
        let mut init = Initializer::new(seed);
        let mut params = ParamSet::new();
        let mut bn_count = 0;
        let block = ResSeBlock::build(config, "block", &mut init, &mut params, &mut bn_count)?;
        Ok((block, params, bn_count))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        bn_states: &mut [BatchNormState],
        mode: BnMode,
        x: Var,
    ) -> Result<Var> {
        let in_shape = tape.value(x).shape().to_vec();
        let t = self.conv1.forward(tape, vars, bn_states, mode, x)?;
        let t = self.conv2.forward(tape, vars, bn_states, mode, t)?;
        let v = self.se.forward(tape, vars, t)?;
        let f = tape.relu(v);
        let y = tape.add(x, f)?;
        if tape.value(y).shape() != in_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                context: "ResSeBlock::forward",
                left: in_shape,
                right: tape.value(y).shape().to_vec(),
            });
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{register_params, Initializer, ParamSet};
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    fn build_se(c: usize, r: usize, seed: u64) -> (SeBlock, ParamSet) {
        let mut init = Initializer::new(seed);
        let mut params = ParamSet::new();
        let se = SeBlock::build(SeBlockConfig::new(c, r).unwrap(), "se", &mut init, &mut params);
        (se, params)
    }

    #[test]
    fn zeroed_fc_adds_one_half_everywhere() {
        // sigmoid(0) = 0.5, broadcast and added to u.
        let (se, mut params) = build_se(3, 16, 1);
        for i in 0..params.len() {
            let shape = params.get(i).shape().to_vec();
            *params.get_mut(i) = Tensor::zeros(shape);
        }
        let mut tape = Tape::new();
        let vars = register_params(&mut tape, &params, false);
        let u_data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| i as f64 * 0.01).collect();
        let u = tape.leaf(Tensor::from_vec(vec![2, 3, 4, 4], u_data.clone()).unwrap(), false);
        let v = se.forward(&mut tape, &vars, u).unwrap();
        for (got, want) in tape.value(v).data().iter().zip(&u_data) {
            assert!((got - (want + 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_input_zero_fc_gives_constant_half() {
        let (se, mut params) = build_se(2, 16, 1);
        for i in 0..params.len() {
            let shape = params.get(i).shape().to_vec();
            *params.get_mut(i) = Tensor::zeros(shape);
        }
        let mut tape = Tape::new();
        let vars = register_params(&mut tape, &params, false);
        let u = tape.leaf(Tensor::zeros(vec![1, 2, 5, 5]), false);
        let v = se.forward(&mut tape, &vars, u).unwrap();
        assert!(tape.value(v).data().iter().all(|&x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn excitation_is_constant_per_channel() {
        let (se, params) = build_se(4, 2, 9);
        let mut tape = Tape::new();
        let vars = register_params(&mut tape, &params, false);
        let n = 1 * 4 * 3 * 3;
        let data: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let u_t = Tensor::from_vec(vec![1, 4, 3, 3], data).unwrap();
        let u = tape.leaf(u_t.clone(), false);
        let v = se.forward(&mut tape, &vars, u).unwrap();
        let diff: Vec<f64> = tape
            .value(v)
            .data()
            .iter()
            .zip(u_t.data())
            .map(|(a, b)| a - b)
            .collect();
        for ch in 0..4 {
            let seg = &diff[ch * 9..(ch + 1) * 9];
            for v in seg {
                assert!((v - seg[0]).abs() < 1e-12);
            }
        }
        // Output shape equals input shape.
        assert_eq!(tape.value(v).shape(), u_t.shape());
    }

    #[test]
    fn hidden_floors_to_one() {
        assert_eq!(SeBlockConfig::new(8, 16).unwrap().hidden(), 1);
        assert_eq!(SeBlockConfig::new(64, 16).unwrap().hidden(), 4);
    }

    #[test]
    fn res_se_forced_inner_path_adds_half() {
        // Zero conv weights and BN beta force the inner activations to zero;
        // the zeroed SE then contributes sigmoid(0) = 0.5, and relu(0.5) = 0.5.
        let mut init = Initializer::new(1);
        let mut params = ParamSet::new();
        let mut bn_count = 0;
        let block = ResSeBlock::build(
            ResSeBlockConfig { channels: 2, se_reduction: 16 },
            "block",
            &mut init,
            &mut params,
            &mut bn_count,
        )
        .unwrap();
        for i in 0..params.len() {
            if !params.name(i).ends_with("bn.gamma") {
                let shape = params.get(i).shape().to_vec();
                *params.get_mut(i) = Tensor::zeros(shape);
            }
        }
        let mut bn_states = vec![BatchNormState::new(2); bn_count];
        let mut tape = Tape::new();
        let vars = register_params(&mut tape, &params, false);
        let x_data: Vec<f64> = (0..2 * 2 * 4 * 4).map(|i| (i as f64 * 0.11).cos()).collect();
        let x = tape.leaf(Tensor::from_vec(vec![2, 2, 4, 4], x_data.clone()).unwrap(), false);
        let y = block.forward(&mut tape, &vars, &mut bn_states, BnMode::Train, x).unwrap();
        for (got, want) in tape.value(y).data().iter().zip(&x_data) {
            assert!((got - (want + 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_inner_path_has_exact_identity_gradient() {
        // With the inner path contributing a constant, dy/dx is the residual
        // identity: exactly 1 per element.
        let (block, mut params, bn_count) =
            ResSeBlock::standalone(ResSeBlockConfig { channels: 2, se_reduction: 16 }, 3).unwrap();
        for i in 0..params.len() {
            if !params.name(i).ends_with("bn.gamma") {
                let shape = params.get(i).shape().to_vec();
                *params.get_mut(i) = Tensor::zeros(shape);
            }
        }
        let mut bn_states = vec![BatchNormState::new(2); bn_count];
        let mut tape = Tape::new();
        let vars = register_params(&mut tape, &params, false);
        let x_data: Vec<f64> = (0..1 * 2 * 3 * 3).map(|i| (i as f64 * 0.7).sin()).collect();
        let x = tape.leaf(Tensor::from_vec(vec![1, 2, 3, 3], x_data).unwrap(), true);
        let y = block.forward(&mut tape, &vars, &mut bn_states, BnMode::Train, x).unwrap();
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn res_se_preserves_shape_with_random_params() {
        let mut init = Initializer::new(5);
        let mut params = ParamSet::new();
        let mut bn_count = 0;
        let block = ResSeBlock::build(
            ResSeBlockConfig { channels: 8, se_reduction: 16 },
            "block",
            &mut init,
            &mut params,
            &mut bn_count,
        )
        .unwrap();
        let mut bn_states = vec![BatchNormState::new(8); bn_count];
        let mut tape = Tape::new();
        let vars = register_params(&mut tape, &params, false);
        let x = tape.leaf(Tensor::full(vec![3, 8, 6, 6], 0.25), false);
        let y = block.forward(&mut tape, &vars, &mut bn_states, BnMode::Train, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[3, 8, 6, 6]);
        assert_eq!(params.total_elements(), ResSeBlock::param_elements(&ResSeBlockConfig { channels: 8, se_reduction: 16 }));
    }
}
