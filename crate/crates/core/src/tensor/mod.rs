//! Dense tensors and the reverse-mode tape used by every layer and loss.

mod dense;
mod gradcheck;
mod tape;

pub use dense::Tensor;
pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{BackwardFn, Tape, Var, PROB_FLOOR};

pub(crate) use tape::softmax_into;
