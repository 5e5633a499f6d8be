//! Simulator and verification suite for a nonlocal, nonisothermal
//! multi-phase field system on Cartesian grids.

// Negated comparisons reject NaN on purpose; banded kernels index several arrays per loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod convex;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod nonlocal;
pub mod quad;
pub mod solver;
pub mod study;
pub mod thermo;

pub use error::{Contract, Error, Result};
