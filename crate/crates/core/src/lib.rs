//! Softmax-margin segmental RNN for frame-semantic argument identification.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: reverse-mode differentiation, LSTM cell, Adam, clipping, dropout
//! - [`encoders`]: token, span and target encoders plus frame/LU embeddings
//! - [`segment`]: segment features and the segment factor network
//! - [`semimarkov`]: cost-augmented partition function, constrained numerator, Viterbi
//! - [`scaffold`]: the binary span scaffold objective and the joint loss
//! - [`frameid`]: the frame identification classifier
//! - [`corpus`]: JSONL corpora, ontology, bracketed trees, embeddings, vocabulary
//! - [`metrics`]: micro-averaged P/R/F1 and exact-match accuracy
//! - [`model`], [`train`], [`predict`], [`checkpoint`], [`config`]: the harness
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the harness and
//! the aliases below fix it to `f64`.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoders;
mod error;
pub mod frameid;
pub mod metrics;
pub mod model;
pub mod predict;
pub mod scaffold;
pub mod segment;
pub mod semimarkov;
pub mod train;

pub use error::{Error, Result};

/// Floating-point type the numeric modules are generic over.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type Tensor = autodiff::Tensor<f64>;
pub type ParameterStore = autodiff::ParameterStore<f64>;
pub type Graph<'p> = autodiff::Graph<'p, f64>;
pub type Gradients = autodiff::Gradients<f64>;
pub type Adam = autodiff::Adam<f64>;
