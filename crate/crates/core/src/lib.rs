//! Robust sum-rate optimization for a downlink in which a multi-antenna base
//! station serves single-antenna users through a fully connected
//! (beyond-diagonal) reconfigurable surface, using rate splitting for
//! information and power splitting for wireless energy harvesting.
//!
//! The design alternates three stages:
//!
//! 1. [`precoder`]: common and private precoders by successive convex
//!    approximation over a semidefinite relaxation, solved with the
//!    built-in interior-point method in [`conic`].
//! 2. [`power_split`]: power-splitting ratios and common-rate shares in
//!    closed form.
//! 3. [`manifold`]: the unitary scattering matrix by Riemannian conjugate
//!    gradient on a Lagrangian with projected subgradient dual updates.
//!
//! [`algorithm`] runs the loop, [`benchmarks`] the comparison schemes and
//! [`sweep`] the seeded Monte-Carlo experiments.
//!
//! Numerical modules are generic over [`Real`] (`f32` or `f64`); the
//! experiment harness runs in `f64`.

// Negated comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod algorithm;
pub mod benchmarks;
pub mod channel;
pub mod conic;
pub mod config;
pub mod design;
pub mod manifold;
pub mod metrics;
pub mod numerics;
pub mod power_split;
pub mod precoder;
pub mod scalar;
pub mod selftest;
pub mod sweep;

pub use scalar::{Real, C};

/// Double-precision matrix.
pub type CMat = numerics::CMatrix<f64>;
/// Single-precision matrix.
pub type CMat32 = numerics::CMatrix<f32>;
/// Double-precision channel realization.
pub type Channels = channel::ChannelSet<f64>;
/// Double-precision design.
pub type Design = design::DesignState<f64>;
