//! Searchable spatio-temporal operators plus the reference variants used by
//! the operator-comparison harness. All operators are shape-preserving over
//! hidden tensors `[B, N, T, D]`.

pub mod attention;
pub mod instance;
pub mod kind;

pub use instance::{OpContext, OperatorHyper, OperatorInstance};
pub use kind::OperatorKind;
