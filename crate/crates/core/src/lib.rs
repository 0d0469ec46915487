//! Duplicate bug-report detection with partially supervised topic
//! clustering.
//!
//! The model is a Siamese bidirectional GRU over report titles. Each
//! hidden state is split so its leading dimensions carry coarse topical
//! information; a self-attention head pools those slices into a report
//! topic vector trained only from duplicate labels, while a conditional
//! attention head and an MLP classify the pair as duplicate or not.
//! Supporting machinery: corpus ingestion and pair generation, a
//! deterministic trainer with Adam and early stopping, K-means topic
//! cluster evaluation, and a tf-idf n-gram logistic regression baseline.

pub mod baseline;
pub mod clustering;
pub mod config;
pub mod corpus;
pub mod duplicate;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod manifest;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod topic;
pub mod trainer;

pub use error::{Error, Result};
