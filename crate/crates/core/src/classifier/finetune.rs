//! Transfer from a pretrained model: drop the classification head, append a
//! fresh head, train it with the old layers frozen, then train everything at
//! a tenth of the learning rate.

use serde::{Deserialize, Serialize};

use super::model::{init_params, ModelState};
use super::spec::{LayerSpec, NetworkSpec};
use super::train::{train, TrainConfig, TrainHistory};
use super::Scalar;
use crate::error::{Error, Result};
use crate::flowpic::FlowPic;
use crate::rng;

const HEAD_INIT_STREAM: u64 = 0x4EAD;
const FROZEN_PHASE: u64 = 4;
const UNFROZEN_PHASE: u64 = 5;

pub const UNFREEZE_LR_FACTOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    /// Widths of the appended hidden dense layers (each followed by ReLU),
    /// before the new `Dense(num_classes), Softmax` output.
    pub head_widths: Vec<usize>,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            head_widths: vec![84, 84],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneOutcome<T: Scalar> {
    pub state: ModelState<T>,
    /// Model right after the frozen phase.
    pub after_frozen: ModelState<T>,
    pub frozen_phase: TrainHistory,
    pub unfrozen_phase: TrainHistory,
    pub frozen_learning_rate: f64,
    pub unfrozen_learning_rate: f64,
    /// Number of leading layers carried over from the pretrained model.
    pub carried_layers: usize,
}

/// Replaces the pretrained `Dense(num_classes), Softmax` head with the
/// configured hidden layers and a new output layer.
pub fn replace_head(
    pretrained: &NetworkSpec,
    num_classes: usize,
    cfg: &FineTuneConfig,
) -> Result<(NetworkSpec, usize)> {
    pretrained.validate(num_classes)?;
    let carried = pretrained.layers.len() - 2;
    let mut layers = pretrained.layers[..carried].to_vec();
    for &w in &cfg.head_widths {
        layers.push(LayerSpec::Dense { units: w });
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Dense { units: num_classes });
    layers.push(LayerSpec::Softmax);
    let spec = NetworkSpec {
        input: pretrained.input,
        layers,
    };
    spec.validate(num_classes)?;
    Ok((spec, carried))
}

pub fn fine_tune<T: Scalar>(
    pretrained: &ModelState<T>,
    target_train: &[FlowPic],
    target_val: &[FlowPic],
    cfg: &TrainConfig,
    ft: &FineTuneConfig,
) -> Result<FineTuneOutcome<T>> {
    cfg.validate()?;
    for p in target_train.iter().chain(target_val) {
        if pretrained.class_index(p.label()).is_err() {
            return Err(Error::ClassSetMismatch(format!(
                "target class {:?} is not one of the pretrained classes {:?}",
                p.label(),
                pretrained.classes()
            )));
        }
    }

    let classes = pretrained.classes().to_vec();
    let (spec, carried) = replace_head(pretrained.spec(), classes.len(), ft)?;
    let head_seed = rng::derive_seed(cfg.seed, &[HEAD_INIT_STREAM]);
    let mut params = pretrained.params()[..carried].to_vec();
    for i in carried..spec.layers.len() {
        params.push(init_params(&spec, head_seed, i)?);
    }
    let mut model = ModelState::from_parts(spec, classes, params, pretrained.seed(), pretrained.epochs_trained())?;

    let mask = (0..model.spec().layers.len()).map(|i| i < carried).collect();
    model.set_frozen(mask)?;
    let frozen_cfg = TrainConfig {
        seed: rng::derive_seed(cfg.seed, &[FROZEN_PHASE]),
        ..*cfg
    };
    let (mut model, frozen_phase) = train(&model, target_train, target_val, &frozen_cfg)?;
    let after_frozen = model.clone();

    model.freeze_all(false);
    let unfrozen_cfg = TrainConfig {
        learning_rate: cfg.learning_rate * UNFREEZE_LR_FACTOR,
        seed: rng::derive_seed(cfg.seed, &[UNFROZEN_PHASE]),
        ..*cfg
    };
    let (model, unfrozen_phase) = train(&model, target_train, target_val, &unfrozen_cfg)?;

    Ok(FineTuneOutcome {
        state: model,
        after_frozen,
        frozen_phase,
        unfrozen_phase,
        frozen_learning_rate: frozen_cfg.learning_rate,
        unfrozen_learning_rate: unfrozen_cfg.learning_rate,
        carried_layers: carried,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_replacement_layout() {
        let (spec, carried) = replace_head(&NetworkSpec::lenet5(3), 3, &FineTuneConfig::default()).unwrap();
        assert_eq!(carried, 13);
        assert_eq!(
            &spec.layers[carried..],
            &[
                LayerSpec::Dense { units: 84 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 84 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 3 },
                LayerSpec::Softmax,
            ]
        );
        // the 0.5 dropout after the old 84-unit layer is carried over
        assert_eq!(spec.layers[12], LayerSpec::Dropout { rate: 0.5 });
    }

    #[test]
    fn rejects_mismatched_head() {
        assert!(replace_head(&NetworkSpec::lenet5(3), 4, &FineTuneConfig::default()).is_err());
    }
}
