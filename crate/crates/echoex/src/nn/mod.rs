//! Extraction networks: encoders, auxiliary embedding network, TI/TV
//! fusion, TCN and DPRNN mask stacks, decoder.

mod config;
mod model;
mod norm;
mod params;
mod stacks;

pub use config::{Arch, DprnnConfig, EncoderConfig, FusionMode, ModelConfig, TcnConfig};
pub use model::{average_embeddings, fuse, EncoderSide, ForwardOutput, InferenceResult, Model};
pub use norm::{cln2d, cln3d, gln};
pub use params::{BoundParams, ModelParams};
pub use stacks::stack_forward;
