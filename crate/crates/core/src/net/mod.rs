//! The convolutional denoiser, its gradients, optimizer and checkpoints.

mod checkpoint;
mod layers;
mod model;
mod optim;
mod real;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use layers::{Conv, Padding};
pub use model::{DenoiserModel, Evaluation, Gradients, NetConfig, Workspace, MIN_SPATIAL};
pub use optim::{adam_step, AdamConfig, OptimState, DEFAULT_BASE_LR, DEFAULT_FLOOR_LR};
pub use real::Real;
pub use tensor::Tensor;
