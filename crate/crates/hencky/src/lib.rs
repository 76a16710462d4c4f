//! Finite-element convex-optimization toolkit for the Hencky model of
//! perfect plasticity.
//!
//! The crate provides exact small-dimension symmetric-tensor algebra with
//! yield-set support functions, simplicial meshes with marked Dirichlet
//! boundaries, discrete displacement/strain/plastic-measure fields, the
//! classical and relaxed energy functionals, a primal-dual solver for their
//! minimisation, a discrete divergence-correction operator, and executable
//! approximation pipelines that recover regular triplets from relaxed ones
//! while tracking energy and total-variation convergence.

pub mod bogovskii;
pub mod error;
pub mod fields;
pub mod functionals;
pub mod mesh;
pub mod pipeline;
pub mod scenario;
pub mod solver;
pub mod tensor;

mod grid;
mod linalg;

pub use error::{Error, Result};
