//! Cooperative multi-agent value factorization.
//!
//! VDN, QMIX, QTRAN and QTRAN++ (with its Mix/FC/LB/Fix ablations) built on a
//! small dense reverse-mode autodiff core, together with stochastic matrix
//! games, a cooperative grid capture game and a seeded experiment harness.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below are what the harness and CLI use.

pub mod algo;
pub mod autodiff;
pub mod checks;
pub mod config;
pub mod env;
pub mod episode;
pub mod error;
pub mod harness;
pub mod nets;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Graph64 = autodiff::Graph<f64>;
pub type ParameterStore64 = autodiff::ParameterStore<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Graph32 = autodiff::Graph<f32>;
