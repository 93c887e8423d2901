//! Space-time cut finite elements for convection-diffusion problems on
//! domains that move through a fixed background mesh.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod error;
pub mod fespace;
pub mod implicit_quadrature;
pub mod jet;
pub mod levelset;
pub mod linalg;
pub mod mesh;
pub mod par;
pub mod schemes_bulk;
pub mod schemes_coupled;
pub mod stabilization;
pub mod quadrature1d;

pub use error::{Error, Result};
