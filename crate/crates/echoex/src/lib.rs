//! Informed source extraction with time-varying reference embeddings,
//! applied to acoustic echo reduction.
//!
//! The crate covers the full desk-scale pipeline: image-method room
//! simulation ([`rir`]), scene construction ([`scene`]), a small
//! reverse-mode tensor engine ([`tensor`]), the extraction networks with
//! time-invariant or time-varying embedding fusion ([`nn`]), the SDR
//! training objective and evaluation metrics ([`metrics`]), the training
//! loop ([`train`]) and the batch-experiment commands ([`commands`]).

pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod rir;
pub mod scene;
pub mod seeding;
pub mod signal;
pub mod tensor;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
