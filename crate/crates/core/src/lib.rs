//! Joint design of per-AP transmit beamformers and reciprocal BD-RIS
//! scattering matrices for cell-free multi-user MIMO downlinks.
//!
//! - [`numerics`]: complex dense kernels (Cholesky solves, log-determinants, Takagi factors).
//! - [`channel`]: 3GPP UMi path loss, Rician fading, equivalent-channel assembly.
//! - [`scattering`]: symmetric-unitary scattering matrices, closed-form gradients, Riemannian ascent.
//! - [`beamformer`]: fractional-programming per-AP beamforming with ζ bisection, plus baselines.
//! - [`metrics`]: covariances, rates, CDFs.
//! - [`harness`]: scenario configs, seeded Monte-Carlo trials, CSV campaigns.

pub mod beamformer;
pub mod channel;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod scattering;

pub use error::{Error, Result};
