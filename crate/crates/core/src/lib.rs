//! Sparse measure-valued optimal control of the 2D evolutionary
//! Navier-Stokes equations.
//!
//! The crate solves tracking-type control problems where the control is a
//! time-indexed pair of signed atomic measures confined to a
//! total-variation ball, computes exact discrete adjoints and derivatives,
//! runs a conditional-gradient method whose linear-minimization oracle
//! places one signed point mass per component and time step, and audits
//! first- and second-order optimality structure on computed solutions.

pub mod adjoint;
pub mod error;
pub mod grid;
pub mod linearized;
pub mod measures;
pub mod mms;
pub mod ns_forward;
pub mod objective;
pub mod optimality;
pub mod optimizer;

pub(crate) mod conv;
pub(crate) mod oseen;
pub(crate) mod spectral;

pub use error::{Error, Result};
