//! Multi-class classification from noisy pairwise similarity labels.
//!
//! Only pairs of instances and a (possibly wrong) "same class" bit are
//! observed. Label noise is modeled on latent class labels with a row-stochastic
//! transition matrix `T`; a classifier `g = softmax(h)` is trained through a
//! fixed transition layer `f = Tᵀ g`, with `ŝ = f_i · f_i'` scored by binary
//! cross-entropy. `T` itself can be estimated from noisy pairs alone by
//! training without the layer and reading the posterior at anchor points.
//!
//! Modules:
//! - [`nn`]: MLP, softmax, backward pass, Adam, finite-difference oracle
//! - [`noise`]: transition matrices, label corruption, pair generation, blobs
//! - [`objective`]: pair losses and batch gradients
//! - [`estimation`]: stage-one training, anchors, T̂ and its error
//! - [`pipeline`]: the two-stage run, evaluation, generalization bound
//! - [`sweep`]: grids of runs aggregated into accuracy tables

pub mod cli;
pub mod config;
pub mod error;
pub mod estimation;
pub mod idx;
pub mod matrix;
pub mod nn;
pub mod noise;
pub mod objective;
pub mod pipeline;
pub mod sweep;
pub mod train;

pub use config::{DataConfig, ExperimentConfig, Method};
pub use error::{Error, Result, Stage};
pub use matrix::Matrix;
pub use nn::{Activation, AdamConfig, AdamState, GradientBundle, MlpModel};
pub use noise::{LabeledDataset, PairStrategy, SimilarityPairBatch, TransitionMatrix};
pub use pipeline::{BoundInputs, ExperimentReport};
