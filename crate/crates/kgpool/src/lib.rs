//! Sentential relation extraction with dynamic knowledge-graph context
//! pooling.
//!
//! Given a sentence with two annotated entities, the model builds a
//! Heterogeneous Information Graph (HIG) out of the sentence, the two
//! entities, and their knowledge-graph attributes (label, aliases,
//! description, instance-of), runs it through stacked graph-convolution
//! blocks, scores the attribute nodes with self-attention, and pools away
//! the ones the sentence does not need — controlled by the Context
//! Coefficient `alpha`. The pooled Context Graph representations are
//! concatenated with a sentential aggregator vector and classified into a
//! relation vocabulary.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] / [`tape`] — dense f64 matrices and reverse-mode autodiff
//! - [`encoder`] — vocabulary, pretrained word vectors, Bi-LSTM encoders
//! - [`hig`] — instance data model and graph construction
//! - [`pooling`] — GCN blocks, readouts, attention scoring, node selection
//! - [`aggregator`] — sentential context aggregators and the classifier
//! - [`model`] — parameter container and the end-to-end forward pass
//! - [`training`] — Adam, cross-entropy, the training loop, checkpoints
//! - [`eval`] — micro P/R/F1, P@K, PR curves, McNemar, degree statistics
//! - [`data`] — dataset / attribute-store / relation-vocabulary files and
//!   the synthetic corpus generator

pub mod aggregator;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod hig;
pub mod model;
pub mod pooling;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
