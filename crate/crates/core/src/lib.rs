//! Tri-modal alignment by triangle area.
//!
//! Three embeddings of the same sample (caption, video, audio) span a
//! triangle; its area is a joint dissimilarity of all three modalities. This
//! crate provides the area kernel and its gradient, contrastive losses built
//! on it and on the usual baselines, small MLP encoders with manual
//! backpropagation, a synthetic tri-modal task, and retrieval evaluation.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use experiment::{compare_convergence, ConvergenceReport, DataSource, Experiment};
pub use geometry::{triangle_area, triangle_area_grad, Orientation, ScoreMatrix};
pub use losses::{LossConfig, LossOutput, Objective};
pub use nn::{EncoderStack, Mlp, ModelConfig, Modality, TriEmbeddings};
pub use train::{train, OptimConfig, RunLog, TrainOutcome};
