//! Differentiable Laplace-equation machinery for laminar cortical geometry.
//!
//! The crate is organised bottom-up:
//!
//! - [`volume`]: grid types, checkerboard masks and the `.vgrid` file format.
//! - [`solver`]: hard-boundary red-black SOR, the 26-neighbour reference
//!   scheme and a dense direct oracle.
//! - [`autodiff`]: the soft-boundary solver driven by class probabilities,
//!   with a hand-written adjoint pass.
//! - [`labelize`]: band-pass sigmoid channels, argmax and equal-width
//!   laminar binning.
//! - [`loss`]: Dice + cross-entropy on tissue and laminar channels.
//! - [`metrics`]: DSC, HD95, the re-solve evaluation protocol, inscribed
//!   sphere thickness, Pearson r and ICC(3,k).
//! - [`phantom`]: synthetic slab, shell and folded-sulcus fixtures.
//! - [`optimize`]: gradient descent on per-voxel logits under the combined
//!   loss.
//! - [`gradcheck`]: finite-difference checks of the adjoint pass.

pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod labelize;
pub mod loss;
pub mod metrics;
pub mod optimize;
pub mod phantom;
pub mod solver;
pub mod volume;

pub use error::{Error, Result};
