//! Self-supervised pretraining and supervised fine-tuning of a 2D U-Net for
//! short-axis cine segmentation, with subset/generalization experiment
//! protocols, 3D Dice evaluation, and a synthetic phantom generator.
//!
//! The crate is organized as:
//!
//! - [`data`]: 4D cine volumes, slice extraction, splits and subsets
//! - [`augment`]: the stochastic augmentation pipeline and multi-crop
//! - [`nn`] / [`unet`]: the network substrate and the U-Net itself
//! - [`ssp`]: the four pretraining objectives and their training loops
//! - [`supervised`]: from-scratch training and fine-tuning
//! - [`evaluation`]: 3D Dice, reports, seed aggregation, result tables
//! - [`phantom`]: synthetic cine phantoms for desk-scale experiments
//! - [`experiment`]: presets, run manifests, and the experiment grids
//!
//! Batch-level inner loops (convolution, augmentation, per-subject Dice,
//! phantom synthesis) are data-parallel via rayon when the default
//! `parallel` feature is enabled and sequential otherwise; results are
//! identical either way.

pub mod augment;
pub mod data;
pub mod error;
pub mod nifti;
pub mod nn;
pub mod parallel;
pub mod phantom;
pub mod rng;

pub use error::{Error, Result};
