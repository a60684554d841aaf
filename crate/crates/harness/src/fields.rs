//! Field-image export: ground-truth, predicted, and pixel-wise-error images
//! for chosen dataset ordinals, from a finished run's checkpoint.

use crate::checkpoint;
use crate::manifest::Manifest;
use crate::pgm::{export_field_image, FieldNormalization};
use crate::runner::{build_network, resolve_samples, CHECKPOINT_FILE};
use stampnet_core::dataset::{Sample, OUTPUT_GRID};
use stampnet_core::nn::register_params;
use stampnet_core::optim::{metrics, Network};
use stampnet_core::tape::{BnMode, Tape};
use stampnet_core::{Error, Result, Tensor};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportNormalization {
    PerImage,
    /// One [min, max] range over all exported GT and PD fields.
    Global,
}

impl ExportNormalization {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per-image" => Ok(ExportNormalization::PerImage),
            "global" => Ok(ExportNormalization::Global),
            other => Err(Error::Format {
                context: "export normalization",
                detail: format!("expected per-image|global, got {other}"),
            }),
        }
    }
}

/// Predict one sample's field with the run's model (eval-mode forward).
fn predict_field(net: &Network, state: &mut stampnet_core::nn::ModelState, sample: &Sample) -> Result<Tensor> {
    let ts = match net {
        Network::Mlp(_) => sample.mlp_sample(),
        Network::Unet(_) => sample.unet_sample(),
    };
    let mut in_shape = vec![1];
    in_shape.extend_from_slice(ts.input.shape());
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, &state.params, false);
    let x = tape.leaf(ts.input.clone().reshaped(in_shape)?, false);
    let pred = match net {
        Network::Mlp(m) => m.forward(&mut tape, &vars, x)?,
        Network::Unet(u) => u.forward(&mut tape, &vars, &mut state.bn, BnMode::Eval, x)?,
    };
    let flat = tape.value(pred).clone();
    flat.reshaped(ts.target.shape().to_vec())
}

/// Write `gt_<ordinal>.pgm`, `pd_<ordinal>.pgm`, and `pwe_<ordinal>.pgm` for
/// each requested ordinal. PWE images always use symmetric normalization
/// about zero; GT/PD use the requested mode. Only image-surrogate runs
/// produce fields.
pub fn export_fields(
    run_dir: &Path,
    ordinals: &[u32],
    normalization: ExportNormalization,
    out_dir: &Path,
) -> Result<()> {
    if ordinals.is_empty() {
        return Err(Error::EmptyInput { context: "export_fields" });
    }
    let manifest = Manifest::read(run_dir)?;
    let config = &manifest.config;
    if config.model != crate::config::ModelKind::ResSeUnet {
        return Err(Error::Format {
            context: "export_fields",
            detail: "field export requires an image-surrogate (res_se_unet) run".into(),
        });
    }
    let net = build_network(config.model, config.width_multiplier)?;
    let template = net.init_state(0);
    let bn_channels: Vec<usize> = template.bn.iter().map(|b| b.channels()).collect();
    let ckpt =
        checkpoint::load_for(&run_dir.join(CHECKPOINT_FILE), &template.params, &bn_channels)?;
    let mut state = ckpt.state;

    let samples = resolve_samples(&config.dataset)?;
    std::fs::create_dir_all(out_dir)?;
    let mut triples = Vec::new();
    for &ordinal in ordinals {
        let sample = samples.iter().find(|s| s.design.ordinal == ordinal).ok_or_else(|| {
            Error::OutOfRange {
                context: "export_fields ordinal",
                value: ordinal as i64,
                min: 0,
                max: samples.last().map(|s| s.design.ordinal as i64).unwrap_or(0),
            }
        })?;
        let pd = predict_field(&net, &mut state, sample)?;
        let gt = sample.target.to_target();
        let pwe = metrics::pwe(&gt, &pd)?;
        triples.push((ordinal, gt, pd, pwe));
    }
    let norm = match normalization {
        ExportNormalization::PerImage => FieldNormalization::PerImage,
        ExportNormalization::Global => {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for (_, gt, pd, _) in &triples {
                for v in gt.data().iter().chain(pd.data()) {
                    min = min.min(*v);
                    max = max.max(*v);
                }
            }
            FieldNormalization::Fixed { min, max }
        }
    };
    for (ordinal, gt, pd, pwe) in &triples {
        export_field_image(gt.data(), OUTPUT_GRID, OUTPUT_GRID, &out_dir.join(format!("gt_{ordinal}.pgm")), norm)?;
        export_field_image(pd.data(), OUTPUT_GRID, OUTPUT_GRID, &out_dir.join(format!("pd_{ordinal}.pgm")), norm)?;
        export_field_image(
            pwe.data(),
            OUTPUT_GRID,
            OUTPUT_GRID,
            &out_dir.join(format!("pwe_{ordinal}.pgm")),
            FieldNormalization::SymmetricAboutZero,
        )?;
    }
    Ok(())
}
