//! Closed-loop simulation and analysis toolkit for load aggregation of
//! distributed energy resources under a deadband controller.
//!
//! The crate is organised bottom-up:
//!
//! * [`case_io`] reads Matpower-style network cases (IEEE 30-bus is embedded).
//! * [`powerflow`] solves the AC power-flow equations and reports losses.
//! * [`agents`] samples the stochastic on/off ensemble.
//! * [`control`] holds the smoothing filter, the PI / lag controllers and the
//!   deadband map.
//! * [`sim`] wires everything into the closed loop and runs repetitions.
//! * [`ergodics`] computes long-run averages, the quantile Wasserstein
//!   criterion and mixing times.
//! * [`filippov`] provides set-valued checkers for piecewise-smooth maps.
//! * [`config`] and [`cli`] drive experiments from plain-text files.

pub mod agents;
pub mod case_io;
pub mod cli;
pub mod config;
pub mod control;
pub mod ergodics;
pub mod filippov;
pub mod powerflow;
pub mod sim;

pub use agents::{AgentKind, AgentParams, EnsembleState};
pub use case_io::{builtin_case30, parse_case, validate_case, CaseData};
pub use control::{ControllerKind, ControllerState, FilterState};
pub use powerflow::{solve_power_flow, PfOptions, PfSolution};
pub use sim::{run_closed_loop, run_ensemble_experiment, RunSet, SimConfig, Trajectory};
