use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::kernels;
use super::spec::{LayerSpec, NetworkSpec, Shape};
use super::Scalar;
use crate::error::{Error, Result};
use crate::flowpic::FlowPic;
use crate::rng;

const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerParams<T> {
    fn zeros(weights: usize, biases: usize) -> Self {
        LayerParams {
            weight: vec![T::zero(); weights],
            bias: vec![T::zero(); biases],
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = &T> {
        self.weight.iter().chain(self.bias.iter())
    }
}

/// Network architecture plus trainable parameters, one [`LayerParams`] per
/// layer (empty for parameterless layers), and a per-layer freeze mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T: Scalar = f32> {
    spec: NetworkSpec,
    classes: Vec<String>,
    params: Vec<LayerParams<T>>,
    frozen: Vec<bool>,
    seed: u64,
    epochs_trained: usize,
    in_shapes: Vec<Shape>,
    out_shapes: Vec<Shape>,
}

pub(crate) struct Trace<T> {
    /// `acts[i]` feeds layer `i`; the last entry is the softmax output.
    acts: Vec<Vec<T>>,
    argmax: Vec<Vec<usize>>,
    masks: Vec<Vec<T>>,
}

impl<T> Trace<T> {
    pub(crate) fn probabilities(&self) -> &[T] {
        self.acts.last().expect("nonempty trace")
    }

    pub(crate) fn logits(&self) -> &[T] {
        &self.acts[self.acts.len() - 2]
    }
}

impl<T: Scalar> ModelState<T> {
    /// Fresh model with seeded uniform fan-in weights (`±sqrt(6 / fan_in)`) and zero biases.
    pub fn new(spec: NetworkSpec, classes: Vec<String>, seed: u64) -> Result<Self> {
        spec.validate(classes.len())?;
        let in_shapes = spec.input_shapes()?;
        let params = spec
            .layers
            .iter()
            .zip(&in_shapes)
            .enumerate()
            .map(|(i, (l, &s))| init_layer(l, s, seed, i))
            .collect();
        Self::from_parts(spec, classes, params, seed, 0)
    }

    pub fn from_parts(
        spec: NetworkSpec,
        classes: Vec<String>,
        params: Vec<LayerParams<T>>,
        seed: u64,
        epochs_trained: usize,
    ) -> Result<Self> {
        spec.validate(classes.len())?;
        let in_shapes = spec.input_shapes()?;
        let out_shapes = spec.output_shapes()?;
        if params.len() != spec.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter blocks for {} layers",
                params.len(),
                spec.layers.len()
            )));
        }
        for (i, (l, p)) in spec.layers.iter().zip(&params).enumerate() {
            let (w, b) = l.param_counts(in_shapes[i]);
            if p.weight.len() != w || p.bias.len() != b {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: expected {w}+{b} params, got {}+{}",
                    p.weight.len(),
                    p.bias.len()
                )));
            }
        }
        let frozen = vec![false; spec.layers.len()];
        Ok(ModelState {
            spec,
            classes,
            params,
            frozen,
            seed,
            epochs_trained,
            in_shapes,
            out_shapes,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn epochs_trained(&self) -> usize {
        self.epochs_trained
    }

    pub(crate) fn add_epochs(&mut self, n: usize) {
        self.epochs_trained += n;
    }

    pub fn params(&self) -> &[LayerParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.params
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn set_frozen(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.spec.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "freeze mask of {} for {} layers",
                mask.len(),
                self.spec.layers.len()
            )));
        }
        self.frozen = mask;
        Ok(())
    }

    pub fn freeze_all(&mut self, frozen: bool) {
        self.frozen.iter_mut().for_each(|f| *f = frozen);
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(LayerParams::len).sum()
    }

    pub fn trainable(&self, layer: usize) -> bool {
        self.spec.layers[layer].has_params() && !self.frozen[layer]
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownClass(label.to_string()))
    }

    pub fn input_from_pic(&self, pic: &FlowPic) -> Result<Vec<T>> {
        let s = self.spec.input;
        if s.channels != 1 || pic.bins() != s.height || pic.bins() != s.width {
            return Err(Error::ShapeMismatch(format!(
                "{0}x{0} pic for network input {s}",
                pic.bins()
            )));
        }
        Ok(pic.cells().iter().map(|&c| T::of(c)).collect())
    }

    /// Class probabilities for each pic, with dropout disabled.
    pub fn forward(&self, batch: &[FlowPic]) -> Result<Vec<Vec<f64>>> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        batch
            .iter()
            .map(|p| {
                let x = self.input_from_pic(p)?;
                Ok(self
                    .trace(&x, None)
                    .probabilities()
                    .iter()
                    .map(|v| v.to_f64().expect("finite"))
                    .collect())
            })
            .collect()
    }

    pub fn predict(&self, batch: &[FlowPic]) -> Result<Vec<String>> {
        Ok(self
            .forward(batch)?
            .iter()
            .map(|row| self.classes[argmax(row)].clone())
            .collect())
    }

    /// Runs one sample; `dropout` supplies randomness in training mode.
    pub(crate) fn trace(&self, input: &[T], mut dropout: Option<&mut ChaCha8Rng>) -> Trace<T> {
        let n = self.spec.layers.len();
        let mut acts = Vec::with_capacity(n + 1);
        let mut argmaxes = vec![Vec::new(); n];
        let mut masks = vec![Vec::new(); n];
        acts.push(input.to_vec());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x = &acts[i];
            let mut out = vec![T::zero(); self.out_shapes[i].len()];
            let p = &self.params[i];
            match *layer {
                LayerSpec::Conv2d { kernel, .. } => {
                    kernels::conv_forward(x, self.in_shapes[i], &p.weight, &p.bias, kernel, &mut out)
                }
                LayerSpec::MaxPool2d { size } => {
                    let mut arg = vec![0; out.len()];
                    kernels::maxpool_forward(x, self.in_shapes[i], size, &mut out, &mut arg);
                    argmaxes[i] = arg;
                }
                LayerSpec::Relu => {
                    for (o, &v) in out.iter_mut().zip(x) {
                        *o = v.max(T::zero());
                    }
                }
                LayerSpec::Dropout { rate } => match dropout.as_deref_mut() {
                    Some(rng) if rate > 0.0 => {
                        let keep = T::of(1.0 / (1.0 - rate));
                        let mask: Vec<T> = (0..x.len())
                            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                            .collect();
                        for ((o, &v), &m) in out.iter_mut().zip(x).zip(&mask) {
                            *o = v * m;
                        }
                        masks[i] = mask;
                    }
                    _ => out.copy_from_slice(x),
                },
                LayerSpec::Flatten => out.copy_from_slice(x),
                LayerSpec::Dense { .. } => kernels::dense_forward(x, &p.weight, &p.bias, &mut out),
                LayerSpec::Softmax => kernels::softmax(x, &mut out),
            }
            acts.push(out);
        }
        Trace {
            acts,
            argmax: argmaxes,
            masks,
        }
    }

    /// Adds this sample's loss gradients into `grads` for every trainable
    /// layer. Back-propagation stops below the lowest trainable layer.
    pub(crate) fn backward(&self, trace: &Trace<T>, target: usize, grads: &mut [LayerParams<T>]) {
        let n = self.spec.layers.len();
        let Some(lowest) = (0..n).find(|&i| self.trainable(i)) else {
            return;
        };
        // d(loss)/d(logits) for softmax + cross-entropy
        let mut g: Vec<T> = trace.probabilities().to_vec();
        g[target] -= T::one();

        for i in (lowest..n - 1).rev() {
            let x = &trace.acts[i];
            let need_input_grad = i > lowest;
            let mut gin = if need_input_grad {
                vec![T::zero(); x.len()]
            } else {
                Vec::new()
            };
            let train_here = self.trainable(i);
            let p = &self.params[i];
            match self.spec.layers[i] {
                LayerSpec::Conv2d { kernel, .. } => {
                    let pg = &mut grads[i];
                    kernels::conv_backward(
                        x,
                        self.in_shapes[i],
                        &p.weight,
                        kernel,
                        &g,
                        train_here.then_some((&mut pg.weight[..], &mut pg.bias[..])),
                        need_input_grad.then_some(&mut gin[..]),
                    );
                }
                LayerSpec::Dense { .. } => {
                    let pg = &mut grads[i];
                    kernels::dense_backward(
                        x,
                        &p.weight,
                        &g,
                        train_here.then_some((&mut pg.weight[..], &mut pg.bias[..])),
                        need_input_grad.then_some(&mut gin[..]),
                    );
                }
                LayerSpec::MaxPool2d { .. } if need_input_grad => {
                    kernels::maxpool_backward(&g, &trace.argmax[i], &mut gin);
                }
                LayerSpec::Relu if need_input_grad => {
                    for ((d, &gv), &v) in gin.iter_mut().zip(&g).zip(x) {
                        *d = if v > T::zero() { gv } else { T::zero() };
                    }
                }
                LayerSpec::Dropout { .. } if need_input_grad => {
                    if trace.masks[i].is_empty() {
                        gin.copy_from_slice(&g);
                    } else {
                        for ((d, &gv), &m) in gin.iter_mut().zip(&g).zip(&trace.masks[i]) {
                            *d = gv * m;
                        }
                    }
                }
                LayerSpec::Flatten if need_input_grad => gin.copy_from_slice(&g),
                _ => {}
            }
            if need_input_grad {
                g = gin;
            }
        }
    }

    pub fn zero_grads(&self) -> Vec<LayerParams<T>> {
        self.spec
            .layers
            .iter()
            .zip(&self.in_shapes)
            .map(|(l, &s)| {
                let (w, b) = l.param_counts(s);
                LayerParams::zeros(w, b)
            })
            .collect()
    }

    /// Mean cross-entropy over the samples, dropout off.
    pub fn loss(&self, inputs: &[Vec<T>], targets: &[usize]) -> f64 {
        let total: f64 = inputs
            .iter()
            .zip(targets)
            .map(|(x, &t)| {
                let tr = self.trace(x, None);
                kernels::cross_entropy(tr.logits(), t).to_f64().expect("finite")
            })
            .sum();
        total / inputs.len() as f64
    }

    /// Mean loss and its gradient for every trainable layer, dropout off.
    pub fn loss_and_gradients(&self, inputs: &[Vec<T>], targets: &[usize]) -> (f64, Vec<LayerParams<T>>) {
        let mut grads = self.zero_grads();
        let mut total = 0.0;
        for (x, &t) in inputs.iter().zip(targets) {
            let tr = self.trace(x, None);
            total += kernels::cross_entropy(tr.logits(), t).to_f64().expect("finite");
            self.backward(&tr, t, &mut grads);
        }
        let scale = T::of(1.0 / inputs.len() as f64);
        grads
            .iter_mut()
            .flat_map(LayerParams::iter_mut)
            .for_each(|g| *g *= scale);
        (total / inputs.len() as f64, grads)
    }
}

fn init_layer<T: Scalar>(layer: &LayerSpec, input: Shape, seed: u64, index: usize) -> LayerParams<T> {
    let (w, b) = layer.param_counts(input);
    let mut p = LayerParams::zeros(w, b);
    if w > 0 {
        let limit = (6.0 / layer.fan_in(input) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let mut r = rng::stream(seed, &[INIT_STREAM, index as u64]);
        p.weight.iter_mut().for_each(|v| *v = T::of(dist.sample(&mut r)));
    }
    p
}

pub(crate) fn init_params<T: Scalar>(spec: &NetworkSpec, seed: u64, index: usize) -> Result<LayerParams<T>> {
    let inputs = spec.input_shapes()?;
    Ok(init_layer(&spec.layers[index], inputs[index], seed, index))
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
