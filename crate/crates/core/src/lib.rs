//! Windowed nearest neighbour (WNN) classification of 28×28 digit images.
//!
//! The crate is organised bottom-up:
//!
//! - [`image`]: the fixed-size greyscale [`Image`].
//! - [`dataset`]: IDX ingestion and the MNIST Balanced / EMNIST Digits splits.
//! - [`augment`]: shifts, rotations, centre resizes and the training-set
//!   extensions built from them (generated on the fly, never materialised).
//! - [`wnn`]: the windowed distance engine, classification and evaluation.
//! - [`dwnn`]: the per-training-image extension distance and the hybrid rule.
//! - [`prune`]: greedy window exclusion driven by cached per-window minima.
//!
//! All squared distances are exact integers; square roots only appear when a
//! distance is reported or when a score is defined on rooted distances.

pub mod augment;
pub mod dataset;
pub mod dwnn;
pub mod image;
pub mod prune;
pub mod wnn;

pub use augment::{AugmentError, AugmentedSet, DatasetFamily, SetId, Transform};
pub use dataset::{DatasetError, LabeledDataset, Role};
pub use dwnn::{HybridConfig, HybridOutcome};
pub use image::{Image, NUM_CLASSES, PIXELS, SIDE};
pub use prune::{ExclusionStep, ExclusionTrace, PruneError, WindowTable};
pub use wnn::{EvaluationReport, Prediction, TrainingSource, WindowSpec, WnnError};
