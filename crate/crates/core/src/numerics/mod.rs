//! Differentiable array core: tensors, a reverse-mode tape, parameters,
//! AdamW, seeded initialization, finite-difference gradient checks and the
//! checkpoint format.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod rng;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use checkpoint::{put_f32s, put_u32, Cursor};
pub use gradcheck::{grad_check, grad_check_params, GradCheckReport, REL_ERR_FLOOR};
pub use graph::{AttentionOpts, Gradients, Graph, Var, IGNORE_TARGET};
pub use optim::AdamW;
pub use params::{ParamGroup, ParamId, ParamStore, Parameter, INIT_STD};
pub use rng::Rng;
pub use tensor::{order_free_mean, order_free_sum, Tensor};

/// Layer-norm epsilon used by every model in the crate.
pub const LN_EPS: f64 = 1e-5;
