//! Diffusion-based self-supervised pretraining for image segmentation.
//!
//! A UNet is first trained as a DDPM noise predictor on unlabeled patches
//! with a P2-weighted objective. Its final projection is then replaced and
//! the whole network is fine-tuned at `t = 0` for multi-class segmentation
//! with a structural-similarity + focal loss.
//!
//! The crate is organised bottom-up:
//!
//! * [`gradcore`]: tensors, reverse-mode autodiff, layer ops, Adam, checkpoint files
//! * [`schedule`]: β/ᾱ schedules, posterior coefficients, SNR and P2 weights
//! * [`diffusion`]: forward noising, losses, ancestral sampling
//! * [`unet`]: attention UNet with sinusoidal time embedding and a swappable head
//! * [`seglosses`]: CE, SS, focal and combined losses plus segmentation metrics
//! * [`data`]: image I/O, patches, augmentation, splits, synthetic data
//! * [`pipeline`]: configs, checkpoints, training loops, evaluation, sampling, CLI

pub mod data;
pub mod diffusion;
pub mod error;
pub mod gradcore;
pub mod pipeline;
pub mod schedule;
pub mod seglosses;
pub mod unet;

pub use error::{Error, Result};
pub use gradcore::Tensor;
