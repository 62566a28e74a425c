//! Semi-distributed interior-point solver for fixed-order intersection coordination.
//!
//! The crate solves the fixed-crossing-order coordination NLP with a primal-dual
//! interior-point method whose KKT systems are eliminated hierarchically across
//! three tiers: vehicles, lane centers and a single intersection center. The
//! hierarchical elimination reproduces the centralized Newton direction exactly,
//! and a communication ledger accounts for every float moved between tiers.

pub mod coordination_net;
pub mod experiments;
pub mod hier_linalg;
pub mod kkt_core;
pub mod linalg;
pub mod pdip_solver;
pub mod reca_param;
pub mod reference_oracle;
pub mod scenario;
pub mod scenario_io;
pub mod transcription;
pub mod vehicle_model;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("horizon too short: vehicle {vehicle} cannot reach p_out={p_out} within K*dt")]
    HorizonTooShort { vehicle: usize, p_out: f64 },
    #[error("crossing time {t} outside [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },
    #[error("iterate not interior: {0}")]
    NotInterior(String),
    #[error("singular matrix in {0}")]
    Singular(String),
    #[error("Hessian regularization failed: zeta exceeded {0}")]
    RegularizationFailure(f64),
    #[error("line search failed after {0} trials")]
    LineSearchFailure(usize),
    #[error("no descent direction: D-phi = {0}")]
    DescentFailure(f64),
    #[error("maximum iterations ({0}) reached")]
    MaxIterations(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
