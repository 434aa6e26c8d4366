//! Cryo-EM homogeneous reconstruction with an explicit 3D Gaussian density.
//!
//! The density is a sum of anisotropic Gaussian kernels. Particle images are
//! predicted by posing the kernels, integrating each along the beam in closed
//! form, filtering with the contrast transfer function and comparing to the
//! measurement; the kernels are fit by Adam on exact analytic gradients.
//! Reconstructions are scored with Fourier shell correlation, windowed local
//! resolution and Fourier slice correlation.

pub mod alloc_track;
pub mod atomic;
pub mod bench;
pub mod ctf;
pub mod dataio;
pub mod error;
pub mod fft;
pub mod gauss_model;
pub mod gradients;
pub mod grid;
pub mod metrics;
pub mod phantom;
pub mod projector;
pub mod trainer;

pub use ctf::{apply_ctf, eval_ctf, CtfArray, CtfParams};
pub use error::{Error, FormatError, Result};
pub use gauss_model::{Gaussian, GaussianSet};
pub use gradients::{loss_and_grad, GradientSet};
pub use grid::{GridSpec, Image, ImageSpec, Volume};
pub use projector::{project, Pose, ProjectorConfig};
