//! Scene-based nonuniformity correction for thermal focal-plane arrays.
//!
//! A drone hovering over a field captures short bursts of images that differ by small
//! homographies. Every frame passes through the same per-pixel gain `g` and offset `d`:
//!
//! ```text
//! y_j = g ⊙ A(S^{H_ij} x_i) + d + n
//! ```
//!
//! [`solver::solve`] recovers the scene radiance `x_i` of every field of view together
//! with `g`, `d`, and the homographies by alternating minimization: Gauss–Newton
//! registration, a closed-form pixel-wise regression for `(g, d)`, and a matrix-free
//! LSQR solve for `x`. [`scene_sim`] generates synthetic datasets with known ground
//! truth and [`metrics`] scores restorations against it.

// `!(v > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Pixel loops index several parallel buffers by the same position.
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod grid;
pub mod io;
pub mod lsqr;
pub mod metrics;
pub mod registration;
pub mod scene_sim;
pub mod solver;

pub use error::{NucError, Result};
pub use grid::{Homography, ImageGrid, Mask, Psf};
