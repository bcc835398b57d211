//! Dense numerics with hand-written reverse-mode gradients.

pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_diff_check, layer_gradient_error};
pub use layers::{layer_backward, layer_forward, LayerSpec};
pub use ops::cosine_sim;
pub use optim::{adam_step, clip_global_norm, global_norm, ParamSet};
pub use tape::{Layer, Sequential, Tape};
pub use tensor::Tensor;
