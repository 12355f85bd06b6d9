//! Numerical engine for multi-soliton tau-functions of the KP, BKP and
//! two-dimensional Toda hierarchies, viewed as grand partition functions of a
//! two-component lattice Coulomb gas with image-charge boundary conditions.
//!
//! The crate has three layers:
//!
//! * [`soliton`] evaluates Hirota-form tau-functions `τ_N = Σ_ν exp(Σ A_ij ν_i ν_j + Σ φ_i ν_i)`
//!   over the 2^N occupation configurations, in log-space, together with the
//!   closed-form time shifts `t → t ± [z⁻¹]` used by bilinear identities.
//! * [`geometry`] / [`gas`] evaluate the electrostatic side: pair, self and
//!   external potentials for a charge in the upper half plane, the quarter
//!   plane, and the exterior of a disc (directly or through a conformal map),
//!   and the grand/canonical partition sums of the resulting lattice gas.
//! * [`correspond`], [`verify`] and [`matrix_model`] connect the two: momentum
//!   maps and phase construction identifying tau with the gas, the
//!   charge-sector extraction that degenerates the Toda tau-chain into the
//!   partition chain of a discretised normal matrix model, and residual checks
//!   of the hierarchy identities (differential and contour-integral bilinear
//!   forms).
//!
//! All heavy sums are accumulated with a running-maximum log-sum-exp scheme so
//! magnitudes never leave log-space; see [`tau::TauValue`].
//!
//! Core numerics are generic over the real scalar (`f32`, `f64`, …) through
//! [`scalar::Real`]; the aliases below fix the common double-precision types.

pub mod correspond;
pub mod error;
pub mod gas;
pub mod geometry;
pub mod matrix_model;
pub mod sampling;
pub mod scalar;
pub mod soliton;
pub mod tau;
pub mod verify;

pub use error::{Error, Result};

/// Double-precision complex scalar used by most call sites.
pub type C64 = num_complex::Complex<f64>;
/// Single-precision complex scalar (genericity smoke tests, mostly).
pub type C32 = num_complex::Complex<f32>;

/// Double-precision log-space value of a tau-function or partition sum.
pub type TauValue64 = tau::TauValue<f64>;
/// Double-precision soliton system.
pub type SolitonSystem64 = soliton::SolitonSystem<f64>;
/// Double-precision hierarchy time vector.
pub type TimesVector64 = soliton::TimesVector<f64>;
/// Double-precision lattice gas.
pub type LatticeGas64 = gas::LatticeGas<f64>;
/// Double-precision boundary geometry.
pub type BoundaryGeometry64 = geometry::BoundaryGeometry<f64>;
/// Double-precision deterministic sampler.
pub type Sampler64 = sampling::Sampler<f64>;
