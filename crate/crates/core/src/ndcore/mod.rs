//! Dense tensors, reverse-mode autodiff, the MLP, SGD and weight averaging.

mod ema;
mod mlp;
mod optim;
mod tape;
mod tensor;

pub use ema::ParamEma;
pub use mlp::{Dense, MlpModel};
pub use optim::{cosine_lr, sgd_step, OptimState};
pub use tape::{Tape, Var};
pub use tensor::{argmax, matmul, softmax, Tensor};
