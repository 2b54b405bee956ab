//! Dense fp64 tensors, a reverse-mode tape, AdamW and learning-rate schedules.

mod checkpoint;
mod dense;
mod gradcheck;
mod optim;
mod tape;

pub use checkpoint::{load_checkpoint_into, read_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use dense::Tensor;
pub use gradcheck::{finite_difference_gradient, relative_error};
pub use optim::{AdamW, LrSchedule, ParamId, ParamStore, ScheduleKind, StepInfo};
pub use tape::{Gradients, NodeId, SparseMatrix, Tape};

use rand::Rng;

/// Uniform Glorot initialization for a `[fan_in, fan_out]` weight.
pub fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| rng.gen_range(-a..a))
}

/// Uniform in `[-scale, scale)`; a zero scale gives zeros.
pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    if scale == 0.0 {
        return Tensor::zeros(shape);
    }
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}
