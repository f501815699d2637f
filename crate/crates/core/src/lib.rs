//! Structured analysis dictionary learning.
//!
//! Jointly learns an analysis dictionary Ω, a structure map Q and a linear
//! classifier W with a linearized alternating-direction method, and
//! classifies a sample with the single product `argmax(WQΩx)`. A
//! consensus-averaging variant trains on column shards in parallel.

pub mod classify;
pub mod cli;
pub mod data;
pub mod distributed;
pub mod error;
pub mod model;
pub mod solver;

pub use error::{Result, SadlError};
pub use model::{
    DataMatrix, Dims, DistHyperparams, Hyperparams, IterRecord, LabelMatrix, Mat, ModelState,
    Problem, StepMode, StepSizes, StructureTarget, Terms, TrainTrace, UpdateForm, Vector,
};
