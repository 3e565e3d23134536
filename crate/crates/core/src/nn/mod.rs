//! Minimal dense neural-network engine: matrices, ReLU perceptrons,
//! reverse-mode gradients, Adam, and seeded random streams.

mod adam;
mod matrix;
mod mlp;
mod rng;
mod serialize;

pub use adam::{adam_step, AdamState};
pub use matrix::Matrix;
pub use mlp::{sigmoid, ForwardCache, MlpGrads, MlpParams, OutputActivation};
pub use rng::{stream_id, RngStream};
pub use serialize::{load_mlp, read_mlp, save_mlp, write_mlp, MLP_FORMAT_VERSION};
pub(crate) use serialize::check_header as serialize_check_header;
