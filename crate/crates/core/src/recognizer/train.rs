//! Mini-batch training with AdaDelta and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use super::model::{check_frames, check_label, loss_on_tape, LabeledSample};
use super::params::{ModelParams, Weights};
use crate::error::{Error, Result};
use crate::numkit::{backward, DropoutMask, Matrix, NodeId, Rng, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of parameter updates.
    pub iterations: usize,
    pub batch_size: usize,
    /// Encoder-output dropout rate applied during training.
    pub dropout: f64,
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    /// Gradients are rescaled when their global L2 norm exceeds this.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1500,
            batch_size: 16,
            dropout: 0.1,
            learning_rate: 1.0,
            rho: 0.95,
            epsilon: 1e-6,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.rho) || !(self.epsilon > 0.0) {
            return Err(Error::invalid(
                "AdaDelta needs learning_rate > 0, rho in [0, 1), epsilon > 0",
            ));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip_norm must be > 0"));
        }
        Ok(())
    }
}

/// Mean loss of each update, in order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean of the last `n` recorded losses.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let tail = &self.losses[self.losses.len().saturating_sub(n)..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Batch loss and gradients for every tensor, in canonical order.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &[&LabeledSample],
    masks: &[Option<DropoutMask>],
) -> Result<(f64, Weights<Matrix>)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    if masks.len() != batch.len() {
        return Err(Error::invalid("one mask slot per batch sample required"));
    }
    let mut tape = Tape::new();
    let w: Weights<NodeId> = params.weights.map(|m| tape.leaf(m.clone()));
    let mut total: Option<NodeId> = None;
    for (sample, mask) in batch.iter().zip(masks) {
        let l = loss_on_tape(&mut tape, &w, &params.dims, sample, mask.as_ref())?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let total = total.expect("batch is non-empty");
    let loss = tape.scale(total, 1.0 / batch.len() as f64);
    let value = tape.value(loss).get(0, 0);
    if !value.is_finite() {
        return Err(Error::invalid(format!("non-finite training loss {value}")));
    }
    let mut grads = backward(&tape, loss)?;
    let g = w.map(|id| {
        grads
            .take(*id)
            .unwrap_or_else(|| Matrix::zeros(tape.value(*id).rows(), tape.value(*id).cols()))
    });
    Ok((value, g))
}

/// Rescales `grads` in place so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Weights<Matrix>, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .map(|g| g.frobenius_norm_sq())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.tensors_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// AdaDelta accumulators.
#[derive(Clone, Debug)]
pub struct AdaDelta {
    lr: f64,
    rho: f64,
    eps: f64,
    sq_grad: Weights<Matrix>,
    sq_update: Weights<Matrix>,
}

impl AdaDelta {
    pub fn new(params: &ModelParams, lr: f64, rho: f64, eps: f64) -> Self {
        Self {
            lr,
            rho,
            eps,
            sq_grad: Weights::zeros(&params.dims),
            sq_update: Weights::zeros(&params.dims),
        }
    }

    pub fn apply(&mut self, params: &mut ModelParams, grads: &Weights<Matrix>) {
        let (rho, eps, lr) = (self.rho, self.eps, self.lr);
        for (((p, g), eg), ex) in params
            .weights
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.sq_grad.tensors_mut())
            .zip(self.sq_update.tensors_mut())
        {
            for i in 0..p.len() {
                let gi = g.data()[i];
                let eg_i = &mut eg.data_mut()[i];
                *eg_i = rho * *eg_i + (1.0 - rho) * gi * gi;
                let ex_i = &mut ex.data_mut()[i];
                let dx = -((*ex_i + eps).sqrt() / (*eg_i + eps).sqrt()) * gi;
                *ex_i = rho * *ex_i + (1.0 - rho) * dx * dx;
                p.data_mut()[i] += lr * dx;
            }
        }
    }
}

/// Stateful optimizer loop; [`train`] drives it over a dataset.
pub struct Trainer {
    params: ModelParams,
    config: TrainConfig,
    opt: AdaDelta,
    rng: Rng,
    report: TrainReport,
}

impl Trainer {
    pub fn new(params: ModelParams, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        let opt = AdaDelta::new(&params, config.learning_rate, config.rho, config.epsilon);
        Ok(Self {
            params,
            config,
            opt,
            rng: Rng::new(seed),
            report: TrainReport::default(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    /// One update on `batch`; returns the mean loss before the update.
    pub fn step(&mut self, batch: &[&LabeledSample]) -> Result<f64> {
        let hidden = self.params.dims.hidden;
        let masks = batch
            .iter()
            .map(|_| {
                if self.config.dropout > 0.0 {
                    DropoutMask::sample(self.config.dropout, hidden, &mut self.rng).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, mut grads) = loss_and_gradients(&self.params, batch, &masks)?;
        clip_global_norm(&mut grads, self.config.clip_norm);
        self.opt.apply(&mut self.params, &grads);
        self.report.losses.push(loss);
        Ok(loss)
    }

    pub fn finish(self) -> (ModelParams, TrainReport) {
        (self.params, self.report)
    }
}

/// Trains `params` on `data` for `config.iterations` updates. Batches are
/// drawn from a reshuffled permutation each epoch.
pub fn train(
    params: ModelParams,
    data: &[LabeledSample],
    config: &TrainConfig,
    seed: u64,
) -> Result<(ModelParams, TrainReport)> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    for s in data {
        check_frames(&params.dims, &s.features)?;
        check_label(&params.dims, &s.label)?;
    }
    let mut trainer = Trainer::new(params, config.clone(), seed)?;
    let mut order_rng = Rng::derive(seed, &[1]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let bs = config.batch_size.min(data.len());
    for _ in 0..config.iterations {
        let mut batch = Vec::with_capacity(bs);
        while batch.len() < bs {
            if cursor == order.len() {
                order_rng.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(&data[order[cursor]]);
            cursor += 1;
        }
        trainer.step(&batch)?;
    }
    Ok(trainer.finish())
}
