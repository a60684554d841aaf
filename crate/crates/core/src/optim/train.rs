//! Minibatch Adam training with MSE loss, deterministic shuffling, and
//! periodic test-set evaluation.

use super::adam::AdamState;
use super::metrics;
use crate::error::{Error, Result};
use crate::nn::{register_params, Mlp, ModelState, Unet};
use crate::rng::Rng;
use crate::tape::{BnMode, Tape};
use crate::tensor::Tensor;

/// One training pair; inputs/targets carry no batch dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: Tensor,
    pub target: Tensor,
}

/// Either surrogate, behind one training interface.
pub enum Network {
    Mlp(Mlp),
    Unet(Unet),
}

impl Network {
    pub fn init_state(&self, seed: u64) -> ModelState {
        match self {
            Network::Mlp(m) => m.init_state(seed),
            Network::Unet(u) => u.init_state(seed),
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        vars: &[crate::tape::Var],
        bn: &mut [crate::tape::BatchNormState],
        mode: BnMode,
        input: crate::tape::Var,
    ) -> Result<crate::tape::Var> {
        match self {
            Network::Mlp(m) => m.forward(tape, vars, input),
            Network::Unet(u) => u.forward(tape, vars, bn, mode, input),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Test metrics are computed every this many epochs (and at the end).
    pub eval_cadence: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 1, batch_size: 54, seed: 0, eval_cadence: 10 }
    }
}

/// Per-epoch training record. Test fields are populated on cadence epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
    /// Signed per-sample test MPE, in test-set order.
    pub test_mpe: Vec<f64>,
}

impl MetricsRecord {
    pub fn train_lmse(&self) -> Option<f64> {
        metrics::lmse(self.train_mse)
    }

    pub fn test_lmse(&self) -> Option<f64> {
        self.test_mse.and_then(metrics::lmse)
    }
}

/// Stack per-sample tensors into `[B, ...]` batches.
fn stack(samples: &[&TrainSample]) -> (Tensor, Tensor) {
    let mut in_shape = vec![samples.len()];
    in_shape.extend_from_slice(samples[0].input.shape());
    let mut tg_shape = vec![samples.len()];
    tg_shape.extend_from_slice(samples[0].target.shape());
    let mut input = Vec::with_capacity(in_shape.iter().product());
    let mut target = Vec::with_capacity(tg_shape.iter().product());
    for s in samples {
        input.extend_from_slice(s.input.data());
        target.extend_from_slice(s.target.data());
    }
    (Tensor::from_vec_unchecked(in_shape, input), Tensor::from_vec_unchecked(tg_shape, target))
}

/// Shuffled minibatch Adam on MSE. Returns the full per-epoch series; the
/// whole run is a pure function of `(samples, state, optimizer, config)`.
pub fn train(
    net: &Network,
    state: &mut ModelState,
    adam: &mut AdamState,
    train_set: &[TrainSample],
    test_set: &[TrainSample],
    config: &TrainConfig,
) -> Result<Vec<MetricsRecord>> {
    if train_set.is_empty() {
        return Err(Error::EmptyInput { context: "train: empty training set" });
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidGeometry {
            context: "train",
            detail: format!("epochs {} and batch size {} must be >= 1", config.epochs, config.batch_size),
        });
    }
    let mut rng = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut series = Vec::with_capacity(config.epochs);
    let cadence = config.eval_cadence.max(1);
    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut sq_sum = 0.0;
        let mut element_count = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (input, target) = stack(&batch);
            let mut tape = Tape::new();
            let vars = register_params(&mut tape, &state.params, true);
            let x = tape.leaf(input, false);
            // Any non-finite value surfacing in the forward pass aborts with
            // the same diagnostic as a non-finite loss.
            let nan_abort = |e: Error| match e {
                Error::NonFinite { .. } => Error::NanLoss {
                    epoch,
                    batch: batch_idx,
                    learning_rate: adam.config().learning_rate,
                },
                other => other,
            };
            let pred = net
                .forward(&mut tape, &vars, &mut state.bn, BnMode::Train, x)
                .map_err(nan_abort)?;
            let loss = tape.mse_loss(pred, &target).map_err(nan_abort)?;
            let loss_value = tape.value(loss).item()?;
            if !loss_value.is_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    batch: batch_idx,
                    learning_rate: adam.config().learning_rate,
                });
            }
            tape.backward(loss)?;
            let grads: Vec<Tensor> = vars
                .iter()
                .map(|&v| tape.grad(v).expect("trainable leaf has gradient").clone())
                .collect();
            adam.step(&mut state.params, &grads)?;
            sq_sum += loss_value * target.len() as f64;
            element_count += target.len();
        }
        let train_mse = sq_sum / element_count as f64;
        let evaluate_now = epoch % cadence == 0 || epoch == config.epochs;
        let (test_mse, test_mpe) = if evaluate_now && !test_set.is_empty() {
            let (m, e) = evaluate(net, state, test_set, config.batch_size)?;
            (Some(m), e)
        } else {
            (None, Vec::new())
        };
        series.push(MetricsRecord { epoch, train_mse, test_mse, test_mpe });
    }
    Ok(series)
}

/// Eval-mode forward over a sample set: returns the aggregate MSE and the
/// signed per-sample MPE list, reduced in sample order.
pub fn evaluate(
    net: &Network,
    state: &mut ModelState,
    set: &[TrainSample],
    batch_size: usize,
) -> Result<(f64, Vec<f64>)> {
    if set.is_empty() {
        return Err(Error::EmptyInput { context: "evaluate: empty sample set" });
    }
    let mut sq_sum = 0.0;
    let mut element_count = 0usize;
    let mut mpes = Vec::with_capacity(set.len());
    for chunk in set.chunks(batch_size.max(1)) {
        let batch: Vec<&TrainSample> = chunk.iter().collect();
        let (input, target) = stack(&batch);
        let mut tape = Tape::new();
        let vars = register_params(&mut tape, &state.params, false);
        let x = tape.leaf(input, false);
        let pred = net.forward(&mut tape, &vars, &mut state.bn, BnMode::Eval, x)?;
        let pred_t = tape.value(pred);
        sq_sum += metrics::mse(pred_t, &target)? * target.len() as f64;
        element_count += target.len();
        let per = pred_t.len() / batch.len();
        for (i, sample) in batch.iter().enumerate() {
            let pd = Tensor::from_vec_unchecked(
                sample.target.shape().to_vec(),
                pred_t.data()[i * per..(i + 1) * per].to_vec(),
            );
            mpes.push(metrics::mpe(&pd, &sample.target)?);
        }
    }
    Ok((sq_sum / element_count as f64, mpes))
}
