//! Safety filtering for planar Dubins vehicles flying in formation through
//! fields of heading-dependent keep-out zones.
//!
//! The crate is organized around a single idea: the vehicle only ever
//! executes a *committed* trajectory that has been verified safe and that
//! ends on a backup it can follow indefinitely. A nominal plan is never
//! executed directly; instead each replanning step tries to extend the
//! committed trajectory with a prefix of the nominal plus a backup suffix,
//! and keeps the previous commitment when no verified extension exists.
//!
//! Modules:
//! - [`state`]: vehicle state, control input, and input bounds
//! - [`trajectory`]: exact unicycle propagation and sampled trajectories
//! - [`cost`]: running-cost definitions and trajectory cost integrals
//! - [`dubins`]: shortest bounded-curvature paths and their conversion to
//!   executable trajectories
//! - [`zones`]: keep-out zone geometry and safety checks
//! - [`mission`]: leader path planning, formation offsets, tracking control
//! - [`gatekeeper`]: backup search, candidate construction and commitment
//! - [`cbf`]: per-step control barrier function QP filter (baseline)
//!
//! The crate is `no_std` (with `alloc`) so the algorithmic core can run
//! embedded; IO, file formats, and the simulation harness live in the
//! companion binary crate.

#![cfg_attr(not(test), no_std)]
#![warn(missing_docs)]

extern crate alloc;

pub mod cbf;
pub mod cost;
pub mod dubins;
pub mod gatekeeper;
pub mod mission;
pub mod state;
pub mod trajectory;
pub mod zones;

mod error;

pub use error::Error;

/// Convenience alias for fallible operations in this crate.
pub type Result<T> = core::result::Result<T, Error>;
