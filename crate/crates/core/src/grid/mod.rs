//! Image-array primitives: grids and masks, homographies, bilinear warping,
//! PSF convolution, and masked per-pixel statistics.

pub mod homography;
pub mod image;
pub mod moments;
pub mod psf;
pub mod warp;

pub use homography::Homography;
pub use image::{Coverage, ImageGrid, Mask};
pub use moments::{masked_moments, masked_pair_moments, MomentFields, PairMomentFields};
pub use psf::{convolve, convolve_adjoint, Psf};
pub use warp::{sample_bilinear, warp, warp_adjoint, WarpPlan};
