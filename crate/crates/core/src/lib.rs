//! Density of states of effective moiré Hamiltonians for twisted bilayer
//! graphene, computed exactly by Bloch diagonalization and through the
//! semiclassical expansion in `eps = sin(theta/2)`, together with exact
//! finite-dimensional checks of the Weyl calculus behind that expansion.

pub mod atomic;
pub mod effmodel;
pub mod error;
pub mod hscalc;
pub mod lattice;
pub mod linalg;
pub mod semiclassical;
pub mod weylbench;

pub use error::{Error, Result};
