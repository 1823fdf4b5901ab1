//! Simulation, closed-loop control and transition planning for room-scale
//! arrays of inflatable linear actuators.
//!
//! Each actuator is a plastic tube rolled up by constant-force springs. Air
//! from a shared supply line unrolls it (15 cm to 150 cm); opening the large
//! release tap lets the springs pull it back down. This crate holds the pure
//! algorithmic parts and works without `std`:
//!
//! * [`model`]: actuator specs, poses, supply lines and layouts.
//! * [`flow`] and [`sim`]: water-filling flow sharing and the fixed-timestep
//!   simulator with load and sensor models.
//! * [`control`]: bang-bang height regulation with a deadband and settle
//!   detection.
//! * [`plan`]: minimum-makespan valve schedules under shared-line capacity.
//! * [`shapes`]: heightmaps, bundled presets and data physicalization.
//!
//! File formats, the control service and the CLI live in the `lifttiles`
//! crate.

#![no_std]
#![forbid(unsafe_code)]
// negated comparisons below reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod control;
pub mod flow;
pub mod model;
pub mod plan;
pub mod shapes;
pub mod sim;

mod num;

pub use control::{ControlConfig, TargetAssignment, ValveCommand};
pub use model::{
    ActuatorId, ActuatorSpec, ActuatorState, Compressor, CompressorId, Fault, Layout, LineId,
    Orientation, Placement, Pose, SupplyLine, ValveState,
};
pub use plan::{Schedule, TransitionProblem};
pub use shapes::Heightmap;
pub use sim::{SimConfig, SimState, Simulator};

/// Header line leading every versioned document this project reads or writes.
pub const FORMAT_HEADER: &str = "lifttiles-v1";
