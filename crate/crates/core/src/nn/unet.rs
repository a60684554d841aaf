//! The image surrogate: an encoder/decoder with residual SE blocks at the
//! bottleneck and skip connections, mapping a 3-channel 199x199 design image
//! to a 1-channel 50x50 strain field.

use super::blocks::{ResSeBlock, ResSeBlockConfig};
use super::{check_param_count, BnIndices, ConvUnit, Initializer, ModelState, ParamSet};
use crate::conv::ConvGeometry;
use crate::error::{Error, Result};
use crate::tape::{BatchNormState, BnMode, Tape, Var};

pub const INPUT_HW: usize = 199;
pub const OUTPUT_HW: usize = 50;
pub const INPUT_CHANNELS: usize = 3;

/// Spatial extents through the downscale stack, input first.
pub const DOWN_CHAIN: [usize; 8] = [199, 199, 100, 50, 25, 25, 12, 12];
/// Spatial extents produced by each upscale layer.
pub const UP_CHAIN: [usize; 8] = [12, 12, 12, 25, 25, 25, 50, 50];

/// Kernel/stride/padding triples of the seven downscale layers.
const DOWN_GEOMS: [((usize, usize), (usize, usize), (usize, usize)); 7] = [
    ((1, 1), (1, 1), (0, 0)),
    ((11, 11), (2, 2), (5, 5)),
    ((8, 8), (2, 2), (3, 3)),
    ((6, 6), (2, 2), (2, 2)),
    ((3, 3), (1, 1), (1, 1)),
    ((3, 3), (2, 2), (0, 0)),
    ((3, 3), (1, 1), (1, 1)),
];

/// Kernel/stride/padding triples of the eight upscale (transposed) layers.
const UP_GEOMS: [((usize, usize), (usize, usize), (usize, usize)); 8] = [
    ((3, 3), (1, 1), (1, 1)),
    ((3, 3), (1, 1), (1, 1)),
    ((3, 3), (1, 1), (1, 1)),
    ((3, 3), (2, 2), (0, 0)),
    ((3, 3), (1, 1), (1, 1)),
    ((3, 3), (1, 1), (1, 1)),
    ((6, 6), (2, 2), (2, 2)),
    ((3, 3), (1, 1), (1, 1)),
];

/// Full-width channel counts produced by the downscale layers.
const DOWN_BASE: [usize; 7] = [64, 128, 256, 512, 512, 512, 512];
/// Full-width channel counts produced by the first seven upscale layers; the
/// final layer always emits a single channel.
const UP_BASE: [usize; 7] = [512, 512, 512, 256, 256, 256, 128];

const BLOCK_COUNT: usize = 6;
/// Downscale stage whose output feeds the 50x50 skip (0-based).
const SKIP50_STAGE: usize = 2;
/// Downscale stage whose output feeds the 25x25 skip.
const SKIP25_STAGE: usize = 4;

/// How skip features are combined into the upscale path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipMode {
    /// Channel concatenation; the next layer consumes the doubled channels.
    Concat,
    /// Elementwise addition; upscale channel counts are matched to the skips.
    Add,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnetConfig {
    /// Scales every channel count (minimum 1 per layer); 1.0 is the full
    /// Table-2 width, 0.125 the desk preset.
    pub width_multiplier: f64,
    pub se_reduction: usize,
    pub skip_mode: SkipMode,
}

impl Default for UnetConfig {
    fn default() -> Self {
        UnetConfig { width_multiplier: 1.0, se_reduction: 16, skip_mode: SkipMode::Concat }
    }
}

impl UnetConfig {
    pub fn with_width(width_multiplier: f64) -> Self {
        UnetConfig { width_multiplier, ..Default::default() }
    }

    fn scaled(&self, base: usize) -> usize {
        ((base as f64 * self.width_multiplier).round() as usize).max(1)
    }

    fn down_channels(&self) -> Vec<usize> {
        DOWN_BASE.iter().map(|&c| self.scaled(c)).collect()
    }

    fn up_channels(&self, down: &[usize]) -> Vec<usize> {
        let mut up: Vec<usize> = UP_BASE.iter().map(|&c| self.scaled(c)).collect();
        if self.skip_mode == SkipMode::Add {
            // Addition needs channel-matched skips.
            up[3] = down[SKIP25_STAGE];
            up[4] = down[SKIP25_STAGE];
            up[5] = down[SKIP25_STAGE];
            up[6] = down[SKIP50_STAGE];
        }
        up.push(1);
        up
    }
}

/// Res-SE-U-Net: seven conv downscale layers, six serial Res-SE blocks at
/// 12x12, eight transposed-conv upscale layers with skip connections.
pub struct Unet {
    config: UnetConfig,
    down: Vec<ConvUnit>,
    blocks: Vec<ResSeBlock>,
    up: Vec<ConvUnit>,
    param_template: ParamSet,
    down_channels: Vec<usize>,
    up_channels: Vec<usize>,
}

impl Unet {
    pub fn new(config: UnetConfig) -> Result<Self> {
        if !(config.width_multiplier > 0.0) || config.se_reduction == 0 {
            return Err(Error::InvalidGeometry {
                context: "Unet::new",
                detail: format!(
                    "width multiplier {} and SE reduction {} must be positive",
                    config.width_multiplier, config.se_reduction
                ),
            });
        }
        // Verify the geometry tables reproduce the published spatial chains
        // before building anything; a transcription error fails construction.
        let mut hw = DOWN_CHAIN[0];
        for (i, &(k, s, p)) in DOWN_GEOMS.iter().enumerate() {
            let g = ConvGeometry::new(k, s, p)?;
            let (oh, _) = g.out_extent((hw, hw))?;
            if oh != DOWN_CHAIN[i + 1] {
                return Err(Error::InvalidGeometry {
                    context: "Unet::new",
                    detail: format!("downscale layer {i} yields {oh}, expected {}", DOWN_CHAIN[i + 1]),
                });
            }
            hw = oh;
        }
        let mut hw = UP_CHAIN[0];
        for (i, &(k, s, p)) in UP_GEOMS.iter().enumerate() {
            // Layer 0 starts from the bottleneck extent.
            let g = ConvGeometry::new(k, s, p)?;
            let input = if i == 0 { DOWN_CHAIN[7] } else { hw };
            let (oh, _) = g.out_extent_transposed((input, input))?;
            if oh != UP_CHAIN[i] {
                return Err(Error::InvalidGeometry {
                    context: "Unet::new",
                    detail: format!("upscale layer {i} yields {oh}, expected {}", UP_CHAIN[i]),
                });
            }
            hw = oh;
        }

        let (down, blocks, up, _, params, down_channels, up_channels) = Self::build(&config, 0)?;
        check_param_count("Unet::new", Self::expected_param_count(&config), &params)?;
        Ok(Unet { config, down, blocks, up, param_template: params, down_channels, up_channels })
    }

    #[allow(clippy::type_complexity)]
    fn build(
        config: &UnetConfig,
        seed: u64,
    ) -> Result<(
        Vec<ConvUnit>,
        Vec<ResSeBlock>,
        Vec<ConvUnit>,
        Vec<usize>,
        ParamSet,
        Vec<usize>,
        Vec<usize>,
    )> {
        let mut init = Initializer::new(seed);
        let mut params = ParamSet::new();
        let mut bn_channels = Vec::new();
        let down_ch = config.down_channels();
        let up_ch = config.up_channels(&down_ch);

        let mut down = Vec::new();
        let mut cin = INPUT_CHANNELS;
        for (i, (&(k, s, p), &cout)) in DOWN_GEOMS.iter().zip(&down_ch).enumerate() {
            let geom = ConvGeometry::new(k, s, p)?;
            let w = init.weight(
                &mut params,
                format!("down{i}.weight"),
                vec![cout, cin, k.0, k.1],
                cin * k.0 * k.1,
            );
            let b = init.zeros(&mut params, format!("down{i}.bias"), vec![cout]);
            let gamma = init.ones(&mut params, format!("down{i}.bn.gamma"), vec![cout]);
            let beta = init.zeros(&mut params, format!("down{i}.bn.beta"), vec![cout]);
            let state = bn_channels.len();
            bn_channels.push(cout);
            down.push(ConvUnit {
                w,
                b,
                bn: Some(BnIndices { gamma, beta, state }),
                relu: true,
                geom,
                transposed: false,
            });
            cin = cout;
        }

        let block_cfg = ResSeBlockConfig { channels: cin, se_reduction: config.se_reduction };
        let mut bn_count = bn_channels.len();
        let mut blocks = Vec::new();
        for i in 0..BLOCK_COUNT {
            blocks.push(ResSeBlock::build(block_cfg, &format!("block{i}"), &mut init, &mut params, &mut bn_count)?);
            bn_channels.extend([cin, cin]);
        }
        debug_assert_eq!(bn_count, bn_channels.len());

        let mut up = Vec::new();
        for (i, (&(k, s, p), &cout)) in UP_GEOMS.iter().zip(&up_ch).enumerate() {
            let geom = ConvGeometry::new(k, s, p)?;
            let mut layer_cin = if i == 0 { down_ch[6] } else { up_ch[i - 1] };
            if config.skip_mode == SkipMode::Concat {
                if i == 4 {
                    layer_cin += down_ch[SKIP25_STAGE];
                }
                if i == 7 {
                    layer_cin += down_ch[SKIP50_STAGE];
                }
            }
            let w = init.weight(
                &mut params,
                format!("up{i}.weight"),
                vec![layer_cin, cout, k.0, k.1],
                layer_cin * k.0 * k.1,
            );
            let b = init.zeros(&mut params, format!("up{i}.bias"), vec![cout]);
            let last = i == UP_GEOMS.len() - 1;
            let bn = if last {
                None
            } else {
                let gamma = init.ones(&mut params, format!("up{i}.bn.gamma"), vec![cout]);
                let beta = init.zeros(&mut params, format!("up{i}.bn.beta"), vec![cout]);
                let state = bn_channels.len();
                bn_channels.push(cout);
                Some(BnIndices { gamma, beta, state })
            };
            up.push(ConvUnit { w, b, bn, relu: !last, geom, transposed: true });
        }
        Ok((down, blocks, up, bn_channels, params, down_ch, up_ch))
    }

    /// Closed-form parameter count implied by the configuration alone.
    pub fn expected_param_count(config: &UnetConfig) -> usize {
        let down_ch = config.down_channels();
        let up_ch = config.up_channels(&down_ch);
        let mut total = 0;
        let mut cin = INPUT_CHANNELS;
        for (&(k, _, _), &cout) in DOWN_GEOMS.iter().zip(&down_ch) {
            total += cout * cin * k.0 * k.1 + cout + 2 * cout;
            cin = cout;
        }
        let block_cfg = ResSeBlockConfig { channels: cin, se_reduction: config.se_reduction };
        total += BLOCK_COUNT * ResSeBlock::param_elements(&block_cfg);
        for (i, (&(k, _, _), &cout)) in UP_GEOMS.iter().zip(&up_ch).enumerate() {
            let mut layer_cin = if i == 0 { down_ch[6] } else { up_ch[i - 1] };
            if config.skip_mode == SkipMode::Concat {
                if i == 4 {
                    layer_cin += down_ch[SKIP25_STAGE];
                }
                if i == 7 {
                    layer_cin += down_ch[SKIP50_STAGE];
                }
            }
            let bn = if i == UP_GEOMS.len() - 1 { 0 } else { 2 * cout };
            total += layer_cin * cout * k.0 * k.1 + cout + bn;
        }
        total
    }

    pub fn config(&self) -> &UnetConfig {
        &self.config
    }

    pub fn param_template(&self) -> &ParamSet {
        &self.param_template
    }

    pub fn down_channel_plan(&self) -> &[usize] {
        &self.down_channels
    }

    pub fn up_channel_plan(&self) -> &[usize] {
        &self.up_channels
    }

    pub fn init_state(&self, seed: u64) -> ModelState {
        let (_, _, _, bn_channels, params, _, _) =
            Self::build(&self.config, seed).expect("validated configuration");
        ModelState { params, bn: bn_channels.iter().map(|&c| BatchNormState::new(c)).collect() }
    }

    /// `[B, 3, 199, 199] -> [B, 1, 50, 50]`, asserting the spatial chain at
    /// every stage.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        bn_states: &mut [BatchNormState],
        mode: BnMode,
        input: Var,
    ) -> Result<Var> {
        let (_, c, h, w) = tape.value(input).dims4("Unet::forward input")?;
        if c != INPUT_CHANNELS || h != INPUT_HW || w != INPUT_HW {
            return Err(Error::ShapeMismatch {
                context: "Unet::forward",
                left: vec![c, h, w],
                right: vec![INPUT_CHANNELS, INPUT_HW, INPUT_HW],
            });
        }
        let mut x = input;
        let mut skip50 = None;
        let mut skip25 = None;
        for (i, layer) in self.down.iter().enumerate() {
            x = layer.forward(tape, vars, bn_states, mode, x)?;
            self.expect_extent(tape, x, DOWN_CHAIN[i + 1], "downscale")?;
            if i == SKIP50_STAGE {
                skip50 = Some(x);
            }
            if i == SKIP25_STAGE {
                skip25 = Some(x);
            }
        }
        for block in &self.blocks {
            x = block.forward(tape, vars, bn_states, mode, x)?;
        }
        self.expect_extent(tape, x, DOWN_CHAIN[7], "bottleneck")?;
        let (skip50, skip25) = (skip50.expect("skip stage ran"), skip25.expect("skip stage ran"));
        for (i, layer) in self.up.iter().enumerate() {
            if i == 4 {
                x = self.join_skip(tape, x, skip25)?;
            }
            if i == 7 {
                x = self.join_skip(tape, x, skip50)?;
            }
            x = layer.forward(tape, vars, bn_states, mode, x)?;
            self.expect_extent(tape, x, UP_CHAIN[i], "upscale")?;
        }
        Ok(x)
    }

    fn join_skip(&self, tape: &mut Tape, x: Var, skip: Var) -> Result<Var> {
        match self.config.skip_mode {
            SkipMode::Concat => tape.concat_channels(x, skip),
            SkipMode::Add => tape.add(x, skip),
        }
    }

    fn expect_extent(&self, tape: &Tape, v: Var, want: usize, stage: &'static str) -> Result<()> {
        let shape = tape.value(v).shape();
        if shape[2] != want || shape[3] != want {
            return Err(Error::InvalidGeometry {
                context: "Unet::forward",
                detail: format!("{stage} extent {x}x{y}, expected {want}", x = shape[2], y = shape[3]),
            });
        }
        Ok(())
    }
}
