//! Text representation engine: word2vec and topical word embeddings, LDA
//! topic modelling, a convolutional variational autoencoder document
//! encoder, and classifier-based evaluation of document vectors.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used for training and for gradient checking.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod classify;
pub mod cnnvae;
pub mod corpus;
pub mod error;
pub mod io;
pub mod lda;
pub mod matrix;
pub mod scalar;
pub mod twe;
pub mod word2vec;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Embeddings32 = word2vec::EmbeddingMatrix<f32>;
pub type Embeddings64 = word2vec::EmbeddingMatrix<f64>;
pub type TopicalEmbeddings32 = twe::TopicalEmbeddings<f32>;
pub type TopicalEmbeddings64 = twe::TopicalEmbeddings<f64>;
pub type VaeModel32 = cnnvae::VaeModel<f32>;
pub type VaeModel64 = cnnvae::VaeModel<f64>;
