//! Multi-scale deep inception convolutional networks for single-shot object
//! detection, built from scratch on `f64` tensors.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] and [`kernels`]: dense tensors and differentiable layer kernels.
//! * [`netbuilder`]: declarative network graphs (the VGG-16 backbone, the
//!   information-square inception unit, the SSD-300 / MDCN-I1 / MDCN-I2
//!   layouts) plus parameter and receptive-field analysis.
//! * [`network`]: executes a graph forward and backward.
//! * [`multibox`]: default boxes, jaccard matching, offset coding, the joint
//!   confidence/localization loss and detection post-processing.
//! * [`kitti`]: KITTI label parsing, NMS and average-precision evaluation.
//! * [`trainer`]: SGD with momentum, learning-rate schedules, gradient
//!   checking, a synthetic dataset and the training loop.
//! * [`cli`]: the command surface used by the `mdcn` binary.

pub mod cli;
pub mod error;
pub mod kernels;
pub mod kitti;
pub mod multibox;
pub mod netbuilder;
pub mod network;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
