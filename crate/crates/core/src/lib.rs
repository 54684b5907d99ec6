//! Locally implicit, globally explicit ADER-DG for scalar transport.
//!
//! The crate is organised bottom-up:
//!
//! * [`basis`] – GLL quadrature and collocated Lagrange operators.
//! * [`mesh`] – periodic Cartesian meshes and CFL bookkeeping.
//! * [`linalg`] – refined dense LU solves.
//! * [`spacetime`] – element-local space-time operators and their solves.
//! * [`scheme`] – the multi-stage locally implicit scheme and classic ADER-DG.
//! * [`stability`] – energy analysis and von Neumann scans.
//! * [`burgers`] – the nonlinear 2D Burgers extension.
//! * [`harness`] – error norms, convergence studies and CSV output.
//! * [`cli`] – the command line front end.

pub mod basis;
pub mod burgers;
pub mod cli;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod scheme;
pub mod spacetime;
pub mod stability;

pub use error::{Error, Result};
