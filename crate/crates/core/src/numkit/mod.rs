//! Minimal dense numerics: enough to train small actor-critic MLPs with hand-written gradients.

mod adam;
mod matrix;
mod mlp;
mod softmax;

pub use adam::{adam_step, AdamState};
pub use matrix::Matrix;
pub use mlp::{Activation, MlpCache, MlpParams};
pub use softmax::{entropy_from_log_probs, log_softmax, log_softmax_into};
