//! Event-triggered multi-task navigation of a linear mobile robot over
//! switching distributed sensor networks.
//!
//! The crate is organized bottom-up:
//! - [`matops`]: dense linear algebra (Lyapunov solves, eigenvalues, pole placement)
//! - [`network`]: sensor graphs, Laplacians, consensus step sizes
//! - [`plant`]: robot dynamics, measurements, reference trajectory synthesis
//! - [`estimator`]: the per-sensor two-time-scale distributed estimator
//! - [`controller`]: the robot-side event-triggered switching controller
//! - [`certify`]: online error-bound sequences and offline certificates
//! - [`harness`]: scenario files, episode execution, Monte-Carlo metrics, baselines

pub mod certify;
pub mod controller;
pub mod estimator;
pub mod harness;
pub mod matops;
pub mod network;
pub mod plant;

pub use certify::{BoundState, Certificates, TaskCertificate, TrackingCertificate};
pub use controller::{ControllerState, DwellMode, SwitchMessage};
pub use estimator::EstimatorState;
pub use harness::{
    load_scenario, monte_carlo, run_episode, EpisodeTrace, Metrics, Scenario, TickRecord,
};
pub use matops::{Matrix, RiccatiSolution, Vector};
pub use network::SensorGraph;
pub use plant::{ReferenceTrajectory, SensorSpec, SystemModel, TaskSpec};
