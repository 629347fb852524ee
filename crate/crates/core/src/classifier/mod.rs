//! LeNet-5 style FlowPic classifier: architecture, training, fine-tuning and checkpoints.

mod checkpoint;
mod finetune;
mod kernels;
mod model;
mod spec;
mod train;

use std::fmt::Debug;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use finetune::{fine_tune, replace_head, FineTuneConfig, FineTuneOutcome, UNFREEZE_LR_FACTOR};
pub use model::{argmax, LayerParams, ModelState};
pub use spec::{LayerSpec, NetworkSpec, Shape};
pub use train::{evaluate_loss, train, EpochRecord, Optimizer, TrainConfig, TrainHistory};

/// Floating-point element type of a network. Training uses `f32`; gradient
/// checks run the same code in `f64`.
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + Default + Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
}
