//! Pólya-Gamma data-augmentation Gibbs samplers for Bayesian logistic linear
//! mixed models, with chain diagnostics and a geometric-ergodicity checker.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod ergodicity;
pub mod linalg_sampling;
pub mod model;
pub mod pg_random;
pub mod samplers;
pub mod streams;

pub use diagnostics::{acf, ess, mess, msj, DiagnosticsReport};
pub use ergodicity::{check_ge, GEReport};
pub use model::{ChainState, ModelSpec, PriorSpec};
pub use samplers::{run_chain, ChainOutput, Init, RunConfig, SamplerKind};
