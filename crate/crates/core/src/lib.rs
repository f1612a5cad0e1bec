//! Noise-driven escape from resonance traps of the forced Duffing oscillator:
//! elliptic action-angle geometry, resonance-zone pendulum reduction,
//! averaged energy dynamics and exit times, SDE simulation, and
//! quasipotentials of the bottom-well slow system.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaged_h;
pub mod bottom_well;
pub mod elliptic;
pub mod error;
pub mod oscillator;
pub mod quasipotential;
pub mod resonance_zone;
pub mod sdesim;
pub mod table1;

pub use averaged_h::{mean_exit_time, orbit_average, verify_b1_zero, AveragedCoeffs, ExitTime, OrbitAverage};
pub use error::{Error, Result};
pub use oscillator::{ActionAngle, EnergyLevel, PhysicalParams, Side};
pub use resonance_zone::{find_resonance, Forcing, PendulumSystem, ResonanceSpec};
pub use sdesim::{SimConfig, TimeScale};
