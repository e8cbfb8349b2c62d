//! Numerical core for high-contrast fiber homogenization experiments.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
extern crate alloc;

pub mod bessel;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod weighted2d;
pub mod solver3d;
pub mod homogenized;
pub mod corrector;
pub mod defect;
pub mod fourier;

mod math;

pub use error::{Error, Result};
pub use math::{fit_slope, loglog_slope};
