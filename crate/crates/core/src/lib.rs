//! Encrypted-traffic flow toolkit: flows and datasets, synthetic traffic,
//! preprocessing filters, FlowPic histograms, Average and MTU augmentation,
//! a LeNet-5 style classifier with fine-tuning, and evaluation metrics.

pub mod augment;
pub mod classifier;
pub mod error;
pub mod eval;
pub mod flow;
pub mod flowpic;
pub mod preprocess;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
