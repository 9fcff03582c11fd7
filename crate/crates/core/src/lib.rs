//! Two-photon Jaynes-Cummings dynamics for a three-level Rydberg atom crossing
//! a row of vacuum-prepared cavities.
//!
//! The crate is layered bottom-up:
//!
//! * [`params`] holds the coupling constants and detuning.
//! * [`dynamics`] evaluates the closed-form propagator of one excitation
//!   manifold `{|e,n>, |f,n+1>, |g,n+2>}`.
//! * [`ode`] integrates the raw amplitude equations with RK4 and serves as an
//!   independent check on [`dynamics`].
//! * [`protocol`] composes cavity passes on a sparse joint atom-field state and
//!   performs atomic post-selection.
//! * [`metrics`] builds the EPR / W targets and computes fidelity and success
//!   probability.
//! * [`optimizer`] sweeps and refines interaction times.
//! * [`cli`] is the command-line front end.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod format;
pub mod metrics;
pub mod ode;
pub mod optimizer;
pub mod params;
pub mod protocol;
pub mod validate;

pub use num_complex::Complex64 as C64;

pub use dynamics::{alpha_n, gamma_n, lambda_n, manifold_propagator, ManifoldIndex, ManifoldPropagator};
pub use error::{Error, Result};
pub use metrics::{fidelity_no_detection, fidelity_post_selected, Fidelity, TargetState};
pub use optimizer::{optimize_times, sweep, Objective, SweepRecord, SweepResult};
pub use params::{FrequencyConvention, PhysicalParams};
pub use protocol::{AtomLevel, CollapsedState, JointState, Pass, ProtocolSpec};
