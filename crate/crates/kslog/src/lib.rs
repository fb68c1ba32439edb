//! Finite-volume simulator and verification workbench for logarithmic
//! Keller-Segel / urban-crime systems
//!
//!   du/dt = Lap u - chi div(u grad log v) - sigma u v + phi
//!   dv/dt = Lap v - v + u v^lambda + psi
//!
//! on rectangular domains with homogeneous Neumann boundaries. Beyond time
//! integration, the crate evaluates small-data certificates and attaches
//! runtime monitors for every quantitative bound the underlying theory
//! provides: the sensitivity threshold, lower bounds for v, the
//! maximum-principle barrier for the transformed variable z, the mass
//! ledger, and long-time convergence to the stationary Neumann problem.

pub mod config;
pub mod elliptic;
pub mod grid;
pub mod harness;
pub mod model;
pub mod monitors;
pub mod output;
pub mod stepper;

pub use grid::{Field, FaceData, GridSpec};
pub use model::{Certificate, ModelParams, Scenario, SourceSpec};
pub use stepper::{State, StepReport, Trajectory};
