#![cfg_attr(all(not(test), not(feature = "std")), no_std)]

//! Two-settlement electricity market simulation on DC networks.
//!
//! The crate models a day-ahead / real-time market pair in which renewable
//! producers submit firm day-ahead commitments and settle their realized
//! deviations at real-time prices, while the operator clears each stage with
//! a deterministic economic dispatch. On top of the dispatch layer it
//! provides:
//!
//! - closed-form affine maps from commitments and realizations to dispatch
//!   and locational prices, conditioned on an assumed set of congested lines
//!   ([`closedform`]);
//! - an exact active-set dispatch solver that discovers the binding set and
//!   doubles as the independent oracle for the affine maps ([`dispatch`]);
//! - pure Nash equilibrium search for the producers' commitment game over
//!   candidate congestion patterns, with day-ahead consistency checks and
//!   Monte Carlo real-time consistency probabilities ([`equilibrium`]);
//! - a scenario-based stochastic planner benchmark with soft line limits
//!   ([`socialopt`]).
//!
//! The crate is `no_std`-compatible (with `alloc`); file formats and the
//! command-line front end live in the companion `gridclear-cli` crate.

extern crate alloc;

pub mod closedform;
pub mod dispatch;
pub mod equilibrium;
pub mod error;
mod linalg;
pub mod market;
pub mod network;
pub mod socialopt;

pub use error::{CaseIssue, Error, Result};
pub use market::{PowerMarket, Stage};

/// Re-export of the linear-algebra crate used in public signatures.
pub use nalgebra;
