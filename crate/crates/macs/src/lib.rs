//! Minimax adaptive control on value cones.
//!
//! This crate synthesizes, certifies and simulates adaptive controllers for
//! linear systems with a finite set of model hypotheses, under a worst-case
//! (ℓ2-gain) performance objective. The value function of the underlying
//! zero-sum game is represented by a finite list of `(S, Q)` matrix pairs —
//! a *value cone* — whose pointwise maximum over vertices gives the game
//! value as a function of the accumulated data moment `Z` and the current
//! state.
//!
//! The main entry points:
//!
//! - [`synthesis::build_example_cone`] — the closed-form cone for the
//!   explicitly solvable model class,
//! - [`synthesis::certify`] — sampled certification of the one-step descent
//!   inequality,
//! - [`synthesis::expand_cone`] — grows a cone from scratch by an expanding
//!   value recursion,
//! - [`control::Controller`] — the online adaptive controller,
//! - [`sim`] — closed-loop rollouts against disturbance adversaries and
//!   empirical gain estimation,
//! - [`oracle`] — brute-force game values on discretized scalar instances.

pub mod cli;
pub mod control;
pub mod error;
pub mod games;
pub mod mat;
pub mod model;
pub mod oracle;
pub mod sim;
pub mod synthesis;
pub mod valuefn;

pub use error::{Error, Result};
