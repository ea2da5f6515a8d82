//! Minimal differentiable-computation core: a reverse-mode tape over dense
//! `f64` vectors, named parameter storage with a flat view for optimizers,
//! multilayer perceptrons, and a finite-difference gradient verifier.
//!
//! The tape registers exactly the operations the models need (affine layers,
//! leaky rectifier, logistic, log/exp/sum/product, the repetition-code
//! soft decode and repeat, the smoothing inverse CDF, mixture log-densities,
//! Bernoulli log-likelihood, closed-form KL, the XOR posterior mix, and
//! log-mean-exp), each with an analytic adjoint that is checked against
//! central finite differences in the test suite.

mod check;
mod mlp;
mod params;
mod tape;

pub use check::{finite_diff_check, FiniteDiffReport};
pub use mlp::{forward_mlp, forward_mlp_logits, NetworkPlan, OutputActivation};
pub use params::{GradBuffer, ParamEntry, ParamStore};
pub use tape::{Tape, Var};

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum DiffError {
    /// A tape can only be swept backward once.
    DoubleBackward,
    /// Backward roots must be scalars.
    NotScalar { len: usize },
    /// Operand shapes disagree.
    ShapeMismatch { what: String },
    /// No parameter with this name.
    UnknownParam(String),
    /// A parameter name was registered twice.
    DuplicateParam(String),
    /// Non-finite value produced; `where_` names the layer or quantity.
    NonFinite { where_: String },
}

impl fmt::Display for DiffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DoubleBackward => write!(f, "tape already consumed by a backward pass"),
            Self::NotScalar { len } => write!(f, "backward root must be scalar, got length {len}"),
            Self::ShapeMismatch { what } => write!(f, "shape mismatch: {what}"),
            Self::UnknownParam(name) => write!(f, "unknown parameter '{name}'"),
            Self::DuplicateParam(name) => write!(f, "parameter '{name}' already registered"),
            Self::NonFinite { where_ } => write!(f, "non-finite value in {where_}"),
        }
    }
}

impl std::error::Error for DiffError {}
