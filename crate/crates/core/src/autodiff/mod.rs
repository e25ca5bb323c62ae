//! Reverse-mode automatic differentiation: tape, parameters, optimizer.

mod optim;
mod params;
mod tape;

pub use optim::{adam_step, noam_lr, warmup_rsqrt_lr, AdamState};
pub use params::{Binder, Checkpoint, Param, ParameterStore};
pub use tape::{concat_cols, concat_rows, Scalar, Tape, Tensor, MASK_LOGIT};
