//! Unsupervised CT metal artifact reduction by artifact disentanglement.
//!
//! The crate is split by concern:
//!
//! - [`tensor`]: dense tensors with a reverse-mode autodiff tape and the
//!   convolution/normalization primitives the networks use.
//! - [`ctsim`]: procedural phantoms, parallel-beam projection and
//!   reconstruction, and polychromatic metal-artifact synthesis.
//! - [`baselines`]: linear-interpolation and normalized sinogram inpainting.
//! - [`adn`]: the encoders, decoders and discriminators, and the translation
//!   paths between the artifact-affected and artifact-free domains.
//! - [`train`]: the five losses, alternating adversarial updates, checkpoints.
//! - [`harness`]: masked PSNR/SSIM, evaluation, and the `adn` command line.

pub mod adn;
pub mod baselines;
pub mod ctsim;
pub mod error;
pub mod harness;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
