use std::time::Instant;

use flowforge_core::classifier::{
    fine_tune, train, FineTuneConfig, LayerSpec, ModelState, NetworkSpec, Optimizer, Shape, TrainConfig,
};
use flowforge_core::flow::{split_dataset, Dataset};
use flowforge_core::flowpic::{build_input_pic, FlowPic, PicSpec};
use flowforge_core::preprocess::truncate_to_window;
use flowforge_core::rng;
use flowforge_core::synth::{generate, SynthConfig};
use rand::Rng;

fn pics(ds: &Dataset) -> Vec<FlowPic> {
    let spec = PicSpec::default();
    ds.flows()
        .iter()
        .map(|f| build_input_pic(&truncate_to_window(f, spec.time_span_s).unwrap(), &spec).unwrap())
        .collect()
}

fn synthetic_split(per_class: usize, seed: u64) -> (Vec<String>, Vec<FlowPic>, Vec<FlowPic>, Vec<FlowPic>) {
    let ds = generate(&SynthConfig {
        flows_per_class: per_class,
        seed,
        ..Default::default()
    })
    .unwrap();
    let split = split_dataset(&ds, seed).unwrap();
    (
        ds.classes().to_vec(),
        pics(&split.train),
        pics(&split.val),
        pics(&split.test),
    )
}

fn tiny_spec() -> NetworkSpec {
    NetworkSpec {
        input: Shape::new(1, 8, 8),
        layers: vec![
            LayerSpec::Conv2d { filters: 2, kernel: 3 },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2 },
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { units: 3 },
            LayerSpec::Softmax,
        ],
    }
}

fn param(m: &mut ModelState<f64>, layer: usize, k: usize) -> &mut f64 {
    let p = &mut m.params_mut()[layer];
    let n_w = p.weight.len();
    if k < n_w {
        &mut p.weight[k]
    } else {
        &mut p.bias[k - n_w]
    }
}

#[test]
#[allow(clippy::needless_range_loop)]
fn analytic_gradients_match_central_differences() {
    let classes: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let mut model = ModelState::<f64>::new(tiny_spec(), classes, 3).unwrap();
    let mut r = rng::stream(17, &[]);
    let inputs: Vec<Vec<f64>> = (0..4).map(|_| (0..64).map(|_| r.random::<f64>()).collect()).collect();
    let targets = vec![0, 1, 2, 1];

    let (_, grads) = model.loss_and_gradients(&inputs, &targets);
    let h = 1e-5;
    let (mut checked, mut passed) = (0usize, 0usize);
    for layer in 0..model.params().len() {
        let n_w = model.params()[layer].weight.len();
        let n = model.params()[layer].len();
        for k in 0..n {
            let analytic = if k < n_w {
                grads[layer].weight[k]
            } else {
                grads[layer].bias[k - n_w]
            };
            let orig = *param(&mut model, layer, k);
            *param(&mut model, layer, k) = orig + h;
            let up = model.loss(&inputs, &targets);
            *param(&mut model, layer, k) = orig - h;
            let down = model.loss(&inputs, &targets);
            *param(&mut model, layer, k) = orig;
            let numeric = (up - down) / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs());
            let ok = if scale < 1e-9 {
                (analytic - numeric).abs() < 1e-9
            } else {
                (analytic - numeric).abs() / scale <= 1e-4
            };
            checked += 1;
            passed += usize::from(ok);
        }
    }
    assert_eq!(checked, 18 + 2 + 108 + 6 + 18 + 3);
    assert!(passed as f64 >= 0.95 * checked as f64, "{passed}/{checked}");
}

#[test]
fn fully_frozen_model_is_unchanged() {
    let (classes, train_pics, val_pics, _) = synthetic_split(10, 1);
    let mut model = ModelState::<f32>::new(NetworkSpec::lenet5(classes.len()), classes, 1).unwrap();
    model.freeze_all(true);
    let cfg = TrainConfig {
        epochs: 2,
        ..Default::default()
    };
    let (after, history) = train(&model, &train_pics, &val_pics, &cfg).unwrap();
    assert_eq!(after.params(), model.params());
    assert!(history.epochs.is_empty());
}

#[test]
fn partially_frozen_layers_stay_bit_identical() {
    let (classes, train_pics, val_pics, _) = synthetic_split(10, 2);
    let mut model = ModelState::<f32>::new(NetworkSpec::lenet5(classes.len()), classes, 2).unwrap();
    let mask: Vec<bool> = (0..model.spec().layers.len()).map(|i| i < 5).collect();
    model.set_frozen(mask).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        optimizer: Optimizer::SgdMomentum,
        learning_rate: 0.01,
        ..Default::default()
    };
    let (after, _) = train(&model, &train_pics, &val_pics, &cfg).unwrap();
    assert_eq!(after.params()[0], model.params()[0]);
    assert_eq!(after.params()[3], model.params()[3]);
    assert_ne!(after.params()[8], model.params()[8]);
}

#[test]
fn training_is_deterministic() {
    let (classes, train_pics, val_pics, _) = synthetic_split(10, 3);
    let model = ModelState::<f32>::new(NetworkSpec::lenet5(classes.len()), classes, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        seed: 5,
        ..Default::default()
    };
    let a = train(&model, &train_pics, &val_pics, &cfg).unwrap();
    let b = train(&model, &train_pics, &val_pics, &cfg).unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(a.0, b.0);
}

#[test]
fn unknown_class_is_rejected() {
    let (_, train_pics, val_pics, _) = synthetic_split(10, 4);
    let model = ModelState::<f32>::new(NetworkSpec::lenet5(2), vec!["bulk".into(), "chat".into()], 3).unwrap();
    assert!(train(&model, &train_pics, &val_pics, &TrainConfig::default()).is_err());
}

#[test]
fn separable_synthetic_classes_are_learned() {
    let (classes, train_pics, val_pics, _) = synthetic_split(40, 5);
    let model = ModelState::<f32>::new(NetworkSpec::lenet5(classes.len()), classes, 5).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        early_stop_patience: 0,
        seed: 5,
        ..Default::default()
    };
    let start = Instant::now();
    let (_, history) = train(&model, &train_pics, &val_pics, &cfg).unwrap();
    eprintln!("20 epochs x {} pics: {:?}", train_pics.len(), start.elapsed());
    let last = history.epochs.last().unwrap();
    assert_eq!(history.epochs.len(), 20);
    assert!(last.train_accuracy >= 0.95, "{last:?}");
}

#[test]
fn fine_tune_follows_the_protocol() {
    let (classes, train_pics, val_pics, _) = synthetic_split(20, 6);
    let base = ModelState::<f32>::new(NetworkSpec::lenet5(classes.len()), classes, 6).unwrap();
    let pre_cfg = TrainConfig {
        epochs: 3,
        seed: 6,
        ..Default::default()
    };
    let (pretrained, _) = train(&base, &train_pics, &val_pics, &pre_cfg).unwrap();

    let cfg = TrainConfig {
        epochs: 3,
        learning_rate: 2e-3,
        seed: 7,
        ..Default::default()
    };
    let out = fine_tune(&pretrained, &train_pics, &val_pics, &cfg, &FineTuneConfig::default()).unwrap();
    assert_eq!(out.carried_layers, 13);
    for i in 0..out.carried_layers {
        assert_eq!(out.after_frozen.params()[i], pretrained.params()[i], "layer {i}");
    }
    assert_eq!(out.frozen_learning_rate, 2e-3);
    assert_eq!(out.unfrozen_learning_rate, 2e-3 * 0.1);
    assert!(out.frozen_phase.epochs.iter().all(|e| e.learning_rate == 2e-3));
    assert!(out.unfrozen_phase.epochs.iter().all(|e| e.learning_rate == 2e-3 * 0.1));
    assert!(out.state.frozen().iter().all(|f| !f));
    // both phases ran and the unfrozen phase moved the old layers
    assert!(!out.frozen_phase.epochs.is_empty() && !out.unfrozen_phase.epochs.is_empty());
    assert_ne!(out.state.params()[0], pretrained.params()[0]);
    let head = out.state.spec().layers.len();
    assert_eq!(head, 19);
}

#[test]
fn fine_tune_rejects_foreign_classes() {
    let (_, train_pics, val_pics, _) = synthetic_split(10, 8);
    let other = ModelState::<f32>::new(NetworkSpec::lenet5(2), vec!["x".into(), "y".into()], 1).unwrap();
    let err = fine_tune(
        &other,
        &train_pics,
        &val_pics,
        &TrainConfig::default(),
        &FineTuneConfig::default(),
    );
    assert!(err.is_err());
}

#[test]
fn fine_tune_on_pretrain_data_does_not_regress() {
    let (classes, train_pics, val_pics, _) = synthetic_split(40, 9);
    let base = ModelState::<f32>::new(NetworkSpec::lenet5(classes.len()), classes, 9).unwrap();
    let cfg = TrainConfig {
        epochs: 15,
        seed: 9,
        ..Default::default()
    };
    let (pretrained, history) = train(&base, &train_pics, &val_pics, &cfg).unwrap();
    let pre_acc = history.epochs[history.best_epoch.unwrap()].val_accuracy.unwrap();
    let out = fine_tune(&pretrained, &train_pics, &val_pics, &cfg, &FineTuneConfig::default()).unwrap();
    let (_, ft_acc) = flowforge_core::classifier::evaluate_loss(&out.state, &val_pics).unwrap();
    assert!(ft_acc >= pre_acc - 0.02, "{ft_acc} vs {pre_acc}");
}
