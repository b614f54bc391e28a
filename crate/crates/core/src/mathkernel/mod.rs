//! Dense matrices, a reverse-mode tape, optimizers and gradient checking.

mod fdcheck;
mod matrix;
mod optim;
mod params;
mod tape;

pub use fdcheck::{finite_difference_check, FdReport};
pub use matrix::{dot, log_sigmoid, sigmoid, Matrix, RowGroups};
pub use optim::{opt_step, Optimizer};
pub use params::{Param, ParamStore};
pub use tape::{Tape, Var};
