//! Mean-field simulation of a driven, dissipative four-level ensemble and
//! the analysis tools used to find and characterize its time-crystalline
//! phase.

pub mod integrator;
pub mod mat4;
pub mod model;
pub mod optics;
pub mod phases;
pub mod signalkit;
pub mod trace;

pub use integrator::{evolve, rk4_step, steady_state_frozen, IntegrateError, PhaseSchedule, SimConfig};
pub use mat4::{Mat4, C64};
pub use model::{DensityMatrix, LossModel, LossSpec, SystemParams, UnitConvention};
pub use optics::ReadoutConfig;
pub use phases::{classify, run_sweep, ClassifierConfig, PhaseLabel, PhasePoint, SweepSpec};
pub use trace::Trace;
