//! Generalized Dirac systems generated by Morse families.
//!
//! The crate is organised bottom-up:
//!
//! - [`expr`]: symbolic scalar fields with exact differentiation.
//! - [`linalg`]: SVD-based rank, null space and least-squares helpers.
//! - [`linear_dirac`]: Lagrangian subspaces of `U ⊕ U*` and their backward/forward images.
//! - [`morse`]: fibered charts, the Morse matrix and pointwise generation of `S_E`.
//! - [`dirac_field`]: point-dependent Dirac structures on a base chart.
//! - [`reduction`]: semi-explicit DAE assembly and the constraint ladder.
//! - [`integrate`]: projected RK4 integration and numerical certificates.
//! - [`systems`]: builders for the mechanical system classes.
//! - [`tulczyjew`]: the natural coordinate maps between iterated bundles.
//! - [`conventions`]: every sign convention in one place.

pub mod conventions;
pub mod dirac_field;
pub mod expr;
pub mod integrate;
pub mod linalg;
pub mod linear_dirac;
pub mod morse;
pub mod reduction;
pub mod systems;
pub mod tulczyjew;

pub use expr::{ExprError, FieldMatrix, ScalarField, VarSpace};
