//! Dynamic belief-graph engine.
//!
//! Latent binary beliefs evolve as a temporal Markov random field whose
//! potentials are projected from frozen semantic embeddings. An attention
//! model maps belief marginals to action probabilities, and both are trained
//! jointly from observed actions alone by maximizing a per-step evidence
//! lower bound with an amortized factorized posterior.
//!
//! Module map:
//! - [`config`]: model configuration, configurations of `K` binary beliefs, trajectories
//! - [`embeddings`]: embedding tables (`BGT1` files, synthetic generator)
//! - [`belief_graph`]: potentials, Gibbs distribution, marginals, KL
//! - [`action_model`]: belief tokens, self-attention, action log-probabilities
//! - [`inference`]: factorized posterior
//! - [`trainer`]: loss, gradients, Adam, rollout, checkpoints
//! - [`metrics`]: Spearman, Cohen's d, DTW, pairwise structure, clustering
//! - [`harness`]: dataset files, planted synthetic data, command-line driver

#![allow(clippy::needless_range_loop)]

pub mod action_model;
pub mod belief_graph;
pub mod config;
pub mod embeddings;
pub mod error;
pub mod harness;
pub mod inference;
pub mod metrics;
pub mod trainer;

pub use config::{enumerate_configs, Ablation, BeliefConfig, BeliefMarginals, ExpectationMode, ModelConfig, Trajectory};
pub use error::{Error, Result};
