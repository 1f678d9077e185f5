//! Numerical laboratory for finite-size scaling of the hierarchical |φ|⁴ model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exactrg;
pub mod io;
pub mod lattice;
pub mod pertflow;
pub mod profiles;
pub mod quad;
pub mod saw;
pub mod special;

pub use error::{Error, Result};
pub use exactrg::{MCConfig, ObservableSet, RadialPotential};
pub use lattice::{BoundaryCondition, LatticeSpec};
pub use pertflow::FlowParams;
pub use quad::QuadratureConfig;
