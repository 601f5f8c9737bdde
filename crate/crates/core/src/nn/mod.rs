//! A small reverse-mode autodiff engine and the ResUnet built on it.

mod adam;
mod gradcheck;
mod io;
mod resunet;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use io::{decode_weights, encode_weights, load_weights, save_weights};
pub use resunet::{
    param_specs, Arch, FreezePolicy, Forward, Mode, Normalization, ParamKind, ParamSpec, ResUnetParams,
    TargetTransform, Task,
};
pub use tape::{BatchStats, BnMode, Tape, Var, BN_EPS};
pub use tensor::{Scalar, Tensor};
