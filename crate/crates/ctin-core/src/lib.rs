//! Inertial navigation toolkit built around a windowed velocity regressor.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`geometry`]: unit-quaternion and 3-vector algebra for frame transformations.
//! - [`dataio`]: the canonical IMU sequence type, orientation-source policy, and a
//!   synthetic sequence generator with analytically exact ground truth.
//! - [`pipeline`]: sliding-window extraction, navigation-frame rotation, yaw
//!   augmentation, and bias perturbation.
//! - [`baselines`]: strapdown double integration (SINS) and step-based dead
//!   reckoning (PDR).
//! - [`autodiff`]: a minimal reverse-mode automatic differentiation engine over
//!   dense `f64` arrays, with exactly the operator set the model needs.
//! - [`model`]: the CTIN network — spatial/temporal embeddings, a spatial encoder
//!   with local and global self-attention, a causal temporal decoder, and velocity
//!   plus covariance regression heads.
//! - [`losses`]: MSE, integral velocity loss, covariance negative log-likelihood,
//!   and the learned multi-task combination.
//! - [`metrics`]: trajectory reconstruction from velocity and the ATE / T-RTE /
//!   D-RTE / PDE metric suite with CDF export.
//! - [`trainer`]: Adam, early stopping, and the deterministic train/validate/test
//!   loop.
//! - [`reportgen`]: comparison tables and relative-improvement arithmetic.
//!
//! Everything is computed in `f64`. The crate is `no_std`-compatible (with `alloc`)
//! when built without the `std` feature; in that configuration the `libm` feature
//! must supply the float math. File formats and the command-line interface live in
//! the companion `ctin-cli` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("ctin-core requires either the `std` or the `libm` feature for float math");

pub(crate) mod fm;
pub mod rng;

pub mod autodiff;
pub mod baselines;
pub mod dataio;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod reportgen;
pub mod trainer;
