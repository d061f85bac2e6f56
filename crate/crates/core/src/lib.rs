//! Free-category priors over typed generative programs.
//!
//! A [`category::CategorySpec`] declares typed objects and generator arrows.
//! Programs are morphisms of the free category, drawn by a biased random walk
//! ([`sampler`]) whose arrow preferences come from a transition matrix
//! ([`transition`]). Sampled programs run as latent-variable models
//! ([`model`]) and both structure and parameters are fit by amortised
//! variational inference ([`inference`]).

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod category;
pub mod cli;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod sampler;
pub mod transition;
