//! Construction and verification of Root-type solutions of the Skorokhod
//! embedding problem for one-dimensional diffusions `dX = σ(X) dW`.
//!
//! Given an initial law `ν` and a target law `μ` — *not* assumed to be in
//! convex order — the crate solves the parabolic variational inequality
//!
//! ```text
//! min{ ∂_t u - σ²/2 ∂²_x u,  u - (U_μ - C) } = 0,   u(·,0) = U_ν,
//! ```
//!
//! extracts the space-time barrier `D = {u > U_μ - C}`, and realises the
//! embedding as the first entry time of the diffusion into the complement
//! of `D`. The constant `C` controls how much extra local time the
//! embedding accrues: at the critical value `C* = sup(U_μ - U_ν)` the
//! embedding is minimal, and for larger `C` it embeds the same target law
//! but stops later.
//!
//! Module layout:
//!
//! * [`model`] — probability measures, potentials, the critical constant
//!   and its contact set, volatility specifications;
//! * [`solver`] — projected explicit finite differences for the
//!   variational inequality, with bit-exact discrete invariants;
//! * [`barrier`] — barrier extraction from the solved surface, CSV
//!   round-tripping, hit queries;
//! * [`simulator`] — reproducible parallel Euler–Maruyama paths stopped
//!   at the barrier;
//! * [`diagnostics`] — embedding verification, minimality certification,
//!   solver convergence reports;
//! * [`optimality`] — maximisation of `E[F(τ)]` for concave `F`:
//!   superharmonic certificates and Monte Carlo comparisons;
//! * [`oracles`] — closed-form reference solutions and an independent
//!   lattice value, used by the test suite;
//! * [`config`] / [`pipeline`] — the file-driven command line front end.

// `!(x > 0.0)` rejects NaN together with nonpositive values; stencil
// loops read clearer with explicit indices; math constants keep their
// published digits even where they exceed f64 precision.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::excessive_precision)]

pub mod barrier;
pub mod config;
pub mod diagnostics;
pub mod model;
pub mod optimality;
pub mod oracles;
pub mod pipeline;
pub mod simulator;
pub mod solver;
pub mod stats;
