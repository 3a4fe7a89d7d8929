//! Response solutions of the strongly damped forced oscillator
//!
//! ```text
//! eps x'' + x' + eps g(x) = eps f(omega t)
//! ```
//!
//! where `f` is a quasi-periodic forcing with frequency vector `omega` in R^d
//! and finitely many Fourier modes, and `g` is a real polynomial. A response
//! solution oscillates with the frequencies of the forcing alone:
//!
//! ```text
//! x(t) = c0 + u(omega t, eps),    u(psi, eps) = sum_k sum_nu u_k_nu(eps) e^{i nu . psi}
//! ```
//!
//! with `c0` the equilibrium `g(c0) = f_average` and `u` a formal power series
//! in a bookkeeping parameter (evaluated at 1) whose order-k slice `u_k` has
//! Fourier support of l1-radius at most `k` times the forcing's.
//!
//! The crate computes the slices two independent ways — a labelled-tree
//! expansion ([`trees`], [`series::coeff_via_trees`]) and an order-by-order
//! recursion with sparse mode convolutions ([`series::coeff_via_recursion`]) —
//! and provides the small-divisor and domain diagnostics that control where in
//! the complex `eps` plane the expansion makes sense ([`divisors`],
//! [`analysis`]).

pub mod analysis;
pub mod divisors;
pub mod error;
pub mod problem;
pub mod series;
pub mod trees;

pub use error::{Error, Result};
