//! Compression of embedding tables into K-way D-dimensional discrete codes.
//!
//! Each of `N` symbols gets a code of `D` integers in `[0, K)`. A symbol's
//! embedding is rebuilt by looking up one row per code dimension in small
//! `K × d′` tables and composing those rows, either linearly or with a
//! recurrent cell. Codes are learned from pretrained vectors by minimizing
//! squared reconstruction error with a tempering softmax relaxation and a
//! straight-through estimator.
//!
//! Modules, bottom up:
//!
//! - [`numerics`]: matrices, softmax, SGD, seeded RNG, finite differences.
//! - [`codec`]: code types, code-space arithmetic, the straight-through pair.
//! - [`composer`]: linear and recurrent composition with exact backward passes.
//! - [`trainer`]: code learning and retraining with fixed codes.
//! - [`eval`]: parameter accounting, NMI, neighbor preservation, code groups.
//! - [`data`]: synthetic clusters and file formats.
//! - [`cli`]: the `kdcode` command-line tool.

pub mod cli;
pub mod codec;
pub mod composer;
pub mod data;
mod error;
pub mod eval;
pub mod numerics;
pub mod trainer;

pub use codec::{CodeBook, CodeLogits, KdSpec, ScheduleMode, TemperatureSchedule};
pub use composer::{CodeEmbeddingTables, ComposerParams, ComposerVariant, KdModel};
pub use data::EmbeddingMatrix;
pub use error::{Error, Result};
pub use numerics::{Matrix, Rng};
pub use trainer::{CodeMode, TrainConfig, TrainReport};
