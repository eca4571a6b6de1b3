#![cfg_attr(not(any(test, feature = "std")), no_std)]
//! Discrepancy-aware planning and tracking for differential-drive ground vehicles.
//!
//! The crate is `no_std` (with `alloc`) and contains every numerical piece of the
//! stack: the nominal unicycle model and polar tracking error, the ancillary
//! controllers and tube radii, conformal calibration of model discrepancies,
//! occupancy grids and their inflation into cost maps, the sampling-based
//! planner, a deterministic closed-loop simulator and the driver-assist logic.
//!
//! File formats, configuration and networking live in the `navlab` crate.

extern crate alloc;

pub mod assist;
pub mod conformal;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod gridmap;
pub mod mppi;
pub mod path;
pub mod sim;

pub use error::Error;

pub use dynamics::{Limits, PolarError, Pose, ReferencePoint, VelocityCmd};
