//! Blind image deblurring with a mixture of structure-enhanced Gaussian
//! kernels.
//!
//! The blur kernel is the normalized sum of `N` Gaussian base kernels whose
//! scales, centers, and optionally rotations are free parameters. Deblurring
//! alternates between fitting those parameters by nonlinear conjugate
//! gradient with the latent image fixed, and a closed-form spectral update of
//! the latent image with the kernel fixed.

pub mod cli;
pub mod codec;
pub mod config;
pub mod error;
pub mod fft;
pub mod image;
pub mod kernel;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod synth;

pub use config::SolverConfig;
pub use error::{Error, ErrorCategory, Result};
pub use image::{ColorSpace, ImagePlane, MultiChannelImage};
pub use kernel::{BaseKernelParams, KernelGrid, MixtureParams, Variant};
pub use pipeline::{deblur, DeblurResult, IterationRecord, Termination};
