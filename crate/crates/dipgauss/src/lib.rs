//! Differential-privacy verification for DiPGauss programs.
//!
//! A DiPGauss program reads finite-domain inputs, samples Gaussian and
//! Laplace noise and branches on linear comparisons over the noisy values.
//! This crate parses such programs ([`dsl`]), executes them symbolically into
//! final states with linear guards ([`semantics`]), turns each path into a
//! nested integral plan ([`integrals`]), evaluates the plans to certified
//! rational enclosures ([`quadrature`]) and decides `(eps, delta)`
//! differential privacy from those enclosures ([`verifier`]). The
//! [`benchmarks`] module generates the standard benchmark programs and the
//! [`oracle`] module provides a Monte Carlo cross-check.

pub mod benchmarks;
pub mod dsl;
pub mod integrals;
pub mod oracle;
pub mod quadrature;
pub mod rational;
pub mod semantics;
pub mod verifier;
