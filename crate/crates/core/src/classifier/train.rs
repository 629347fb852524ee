use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::kernels;
use super::model::{argmax, LayerParams, ModelState};
use super::Scalar;
use crate::error::{Error, Result};
use crate::flowpic::FlowPic;
use crate::rng;

const SHUFFLE_STREAM: u64 = 0x5B0F;
const DROPOUT_STREAM: u64 = 0xD209;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    SgdMomentum,
    /// Adam.
    #[default]
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Epochs without validation-loss improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adaptive,
            early_stop_patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (best validation loss).
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

enum OptState<T> {
    Sgd {
        velocity: Vec<LayerParams<T>>,
    },
    Adam {
        m: Vec<LayerParams<T>>,
        v: Vec<LayerParams<T>>,
        step: i32,
    },
}

const MOMENTUM: f64 = 0.9;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl<T: Scalar> OptState<T> {
    fn new(kind: Optimizer, model: &ModelState<T>) -> Self {
        match kind {
            Optimizer::SgdMomentum => OptState::Sgd {
                velocity: model.zero_grads(),
            },
            Optimizer::Adaptive => OptState::Adam {
                m: model.zero_grads(),
                v: model.zero_grads(),
                step: 0,
            },
        }
    }

    fn apply(&mut self, model: &mut ModelState<T>, grads: &[LayerParams<T>], lr: f64) {
        let trainable: Vec<bool> = (0..grads.len()).map(|i| model.trainable(i)).collect();
        let lr_t = T::of(lr);
        match self {
            OptState::Sgd { velocity } => {
                let mom = T::of(MOMENTUM);
                for (i, params) in model.params_mut().iter_mut().enumerate() {
                    if !trainable[i] {
                        continue;
                    }
                    for ((p, v), &g) in params.iter_mut().zip(velocity[i].iter_mut()).zip(grads[i].iter()) {
                        *v = mom * *v - lr_t * g;
                        *p += *v;
                    }
                }
            }
            OptState::Adam { m, v, step } => {
                *step += 1;
                let (b1, b2) = (T::of(BETA1), T::of(BETA2));
                let c1 = T::of(1.0 - BETA1.powi(*step));
                let c2 = T::of(1.0 - BETA2.powi(*step));
                let eps = T::of(EPS);
                for (i, params) in model.params_mut().iter_mut().enumerate() {
                    if !trainable[i] {
                        continue;
                    }
                    let moments = m[i].iter_mut().zip(v[i].iter_mut());
                    for ((p, (mi, vi)), &g) in params.iter_mut().zip(moments).zip(grads[i].iter()) {
                        *mi = b1 * *mi + (T::one() - b1) * g;
                        *vi = b2 * *vi + (T::one() - b2) * g * g;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *p -= lr_t * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

fn prepare<T: Scalar>(model: &ModelState<T>, pics: &[FlowPic]) -> Result<(Vec<Vec<T>>, Vec<usize>)> {
    let mut inputs = Vec::with_capacity(pics.len());
    let mut targets = Vec::with_capacity(pics.len());
    for p in pics {
        targets.push(model.class_index(p.label())?);
        inputs.push(model.input_from_pic(p)?);
    }
    Ok((inputs, targets))
}

/// Mean loss and accuracy with dropout off.
pub fn evaluate_loss<T: Scalar>(model: &ModelState<T>, pics: &[FlowPic]) -> Result<(f64, f64)> {
    let (inputs, targets) = prepare(model, pics)?;
    Ok(loss_accuracy(model, &inputs, &targets))
}

fn loss_accuracy<T: Scalar>(model: &ModelState<T>, inputs: &[Vec<T>], targets: &[usize]) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, &t) in inputs.iter().zip(targets) {
        let tr = model.trace(x, None);
        loss += kernels::cross_entropy(tr.logits(), t).to_f64().expect("finite");
        let probs: Vec<f64> = tr.probabilities().iter().map(|v| v.to_f64().expect("finite")).collect();
        correct += usize::from(argmax(&probs) == t);
    }
    let n = inputs.len() as f64;
    (loss / n, correct as f64 / n)
}

/// Mini-batch cross-entropy training. Frozen layers are never touched.
///
/// With a nonempty validation set and nonzero patience, training stops once
/// validation loss has not improved for `early_stop_patience` epochs, and
/// the best epoch's parameters are returned.
pub fn train<T: Scalar>(
    state: &ModelState<T>,
    train_pics: &[FlowPic],
    val_pics: &[FlowPic],
    cfg: &TrainConfig,
) -> Result<(ModelState<T>, TrainHistory)> {
    cfg.validate()?;
    if train_pics.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (inputs, targets) = prepare(state, train_pics)?;
    let (val_inputs, val_targets) = prepare(state, val_pics)?;

    let mut model = state.clone();
    let mut history = TrainHistory::default();
    let any_trainable = (0..model.spec().layers.len()).any(|i| model.trainable(i));
    if !any_trainable {
        return Ok((model, history));
    }

    let mut opt = OptState::new(cfg.optimizer, &model);
    let mut best: Option<(f64, ModelState<T>, usize)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..inputs.len()).collect();

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut dropout_rng = rng::stream(cfg.seed, &[DROPOUT_STREAM, epoch as u64]);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            let mut grads = model.zero_grads();
            for &i in batch {
                let tr = model.trace(&inputs[i], Some(&mut dropout_rng));
                loss_sum += kernels::cross_entropy(tr.logits(), targets[i])
                    .to_f64()
                    .expect("finite");
                let probs: Vec<f64> = tr.probabilities().iter().map(|v| v.to_f64().expect("finite")).collect();
                correct += usize::from(argmax(&probs) == targets[i]);
                model.backward(&tr, targets[i], &mut grads);
            }
            let scale = T::of(1.0 / batch.len() as f64);
            grads
                .iter_mut()
                .flat_map(LayerParams::iter_mut)
                .for_each(|g| *g *= scale);
            opt.apply(&mut model, &grads, cfg.learning_rate);
        }

        let n = inputs.len() as f64;
        let (val_loss, val_accuracy) = if val_inputs.is_empty() {
            (None, None)
        } else {
            let (l, a) = loss_accuracy(&model, &val_inputs, &val_targets);
            (Some(l), Some(a))
        };
        history.epochs.push(EpochRecord {
            epoch,
            learning_rate: cfg.learning_rate,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
        });
        model.add_epochs(1);

        if let (Some(vl), true) = (val_loss, cfg.early_stop_patience > 0) {
            if best.as_ref().is_none_or(|(b, _, _)| vl < *b) {
                best = Some((vl, model.clone(), epoch));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.early_stop_patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }

    if let Some((_, best_model, epoch)) = best {
        let trained = model.epochs_trained();
        model = best_model;
        // keep counting every epoch actually run
        let behind = trained - model.epochs_trained();
        model.add_epochs(behind);
        history.best_epoch = Some(epoch);
    } else {
        history.best_epoch = history.epochs.last().map(|e| e.epoch);
    }
    Ok((model, history))
}
