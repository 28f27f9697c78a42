//! Indirect shooting for control-affine optimal control problems with
//! bang and singular arcs.

pub mod batch;
pub mod benchmarks;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod integrate;
pub mod plot;
pub mod problem;
pub mod shooting;
pub mod solver;
pub mod structure;

pub use error::{Result, ShootError};
pub use integrate::{IntegrationSettings, TrajectoryRecord};
pub use problem::{
    ControlBound, EndpointConstraints, EndpointCost, FinalTime, ProblemDef, VectorField,
};
pub use shooting::{EntryConditions, Formulation, ResidualVector, ShootingLayout, ShootingProblem};
pub use solver::{Method, ResidualMap, SolveReport, SolverSettings, StopReason};
pub use structure::{ControlStructure, Mode};
