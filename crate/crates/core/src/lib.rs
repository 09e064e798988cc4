//! Residues, regularised traces, heat-kernel coefficients and scalar
//! curvature for classical pseudodifferential operators on flat tori and
//! noncommutative tori, with an independent truncated-matrix spectral oracle
//! cross-checking every symbolic result.

pub mod algebra;
pub mod contour;
pub mod error;
pub mod funcalc;
pub mod heat;
pub mod multiplier;
pub mod oracle;
pub mod resolvent;
pub mod sphere;
pub mod traces;
pub mod special;
pub mod symbol;
pub mod util;

pub use error::{Error, Result};
