//! Latent-space ensemble score filtering.
//!
//! The crate bundles everything needed to run data assimilation on a
//! learned latent dynamics surrogate:
//!
//! * [`tensor`], [`autodiff`], [`nn`], [`optim`], [`checkpoint`]: a small
//!   dense-tensor stack with reverse-mode differentiation, MLP and LSTM
//!   layers, Adam, and a binary parameter format.
//! * [`pde`]: shallow-water and Kolmogorov-flow solvers that generate the
//!   ground-truth trajectories, plus dataset handling and normalization.
//! * [`ldnet`]: the latent dynamics network (dynamics + reconstruction).
//! * [`obs_encoder`]: sparse observation operators and the LSTM encoder that
//!   maps observation histories to latent states and parameters.
//! * [`ensf`]: the training-free ensemble score filter.
//! * [`ldensf`]: the filter run entirely in latent space.
//! * [`harness`]: experiment configuration, pipelines, method comparison and
//!   metrics output.

pub mod autodiff;
pub mod checkpoint;
pub mod ensf;
pub mod error;
pub mod harness;
pub mod ldensf;
pub mod ldnet;
pub mod nn;
pub mod obs_encoder;
pub mod optim;
pub mod pde;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
