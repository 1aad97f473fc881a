//! Truncated flow expansions for non-autonomous ODEs driven by polynomial or
//! rational vector fields and matrices.
//!
//! The crate computes Chen-Fliess series, Magnus expansions (plain and in the
//! interaction picture), Sussmann's ordered products of exponentials and
//! Campbell-Baker-Hausdorff-Dynkin coefficients, all over exact rational
//! arithmetic, and checks them against a high-accuracy Runge-Kutta oracle.
//!
//! Layout:
//! - [`freealg`] — truncated noncommutative series: words, products, exp/log,
//!   Dynkin bracketing, Friedrichs/group-like tests.
//! - [`hall`] — generalized Hall bases, word expansions, exact decomposition
//!   of Lie polynomials, structural factorization with respect to the drift.
//! - [`signals`] — piecewise-polynomial controls with exact iterated
//!   integrals; the coefficient engine behind every expansion.
//! - [`coords`] — Bernoulli numbers and the coordinate families of the first,
//!   second and pseudo-first kind, plus CBHD coefficient tables.
//! - [`fields`] — concrete vector fields (polynomial, a rational family
//!   closed under brackets, linear), exact Lie brackets and majorant norms.
//! - [`flows`] — the adaptive Runge-Kutta reference solver, flows, Jacobians,
//!   pushforwards and matrix Magnus expansions.
//! - [`expansions`] — end-to-end evaluators, error reports, log-log order
//!   fits and the divergence counter-example reproductions.
//! - [`fixtures`] — the named test systems used by the CLI and test suites.

pub mod coords;
pub mod expansions;
pub mod fields;
pub mod fixtures;
pub mod flows;
pub mod freealg;
pub mod hall;
pub mod matrix;
pub mod rat;
pub mod report;
pub mod rng;
pub mod selftest;
pub mod signals;
