//! Autonomous canal navigation: vessel dynamics, system identification,
//! LiDAR line-segment perception and a multiple-shooting NMPC with soft
//! obstacle constraints, plus baseline controllers and a closed-loop
//! simulator.

pub mod baselines;
pub mod commands;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod io;
pub mod ocp;
pub mod perception;
pub mod qp;
pub mod sim;
pub mod solver;
pub mod sysid;

pub use dynamics::{ActuatorState, ParamSet, RateInput, VesselState, Wrench};
pub use error::{Error, Result};
pub use perception::LineSegment;
