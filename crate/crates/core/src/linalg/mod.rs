//! Minimal sparse symmetric linear algebra: upper-triangle CSC storage and an
//! LDL' factorization with reusable symbolic analysis.
//!
//! The factorization follows the classic up-looking algorithm (elimination
//! tree, one sparse triangular solve per column). Orderings are the caller's
//! concern: matrices arrive here already permuted.

pub mod ldl;
pub mod sparse;

pub use ldl::{LdlFactor, LdlSymbolic};
pub use sparse::SymCscPattern;
