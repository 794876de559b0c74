//! Numeric substrate: dense tensors, a define-by-run tape, Adam.

mod adam;
mod dense;
mod gradcheck;
mod mlp;
mod params;
mod tape;

pub use adam::AdamState;
pub use dense::Tensor;
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use mlp::{mlp_forward, Pointwise};
pub use params::{Binder, Linear, Mlp, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var, DIV_EPS};
