use std::fmt;

use crate::odnp::{Halfspace, SignConflict};
use crate::socp::SolveStatus;

/// Crate-wide error type.
///
/// Pipeline stages surface structured payloads (the sign conflict that killed
/// a search, the halfspaces a state violates) so callers can report precisely
/// what went wrong instead of a flattened message.
#[derive(Debug, Clone)]
pub enum Error {
    /// Matrix or vector shapes do not agree.
    Dimension(String),
    /// An argument is outside its documented domain (non-positive step size,
    /// zero horizon, placement past the end of the horizon, ...).
    InvalidArgument(String),
    /// No uniform sign vector exists for the matrix family.
    NotOdnp(SignConflict),
    /// The initial state lies in neither admissible region; the problem is
    /// not solvable from this state with the current sign vector.
    NeitherRegion {
        plus_violated: Vec<Halfspace>,
        minus_violated: Vec<Halfspace>,
    },
    /// The cone solver terminated without an optimality certificate.
    SolverFailure(SolveStatus),
    /// A numerical guard tripped (e.g. a moment diagonal far below zero).
    NumericalFailure(String),
    /// The brute-force search found no feasible grid point in its box; the
    /// payload is the finest grid spacing tried, so callers can tell an
    /// infeasible problem from a too-coarse grid.
    NoFeasiblePoint { finest_spacing: f64 },
    /// A scenario file failed to parse or validate.
    Schema(String),
    /// Underlying I/O failure, with the offending path in the message.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NotOdnp(conflict) => write!(f, "no uniform sign vector: {conflict}"),
            Error::NeitherRegion {
                plus_violated,
                minus_violated,
            } => write!(
                f,
                "state lies in neither admissible region ({} plus-region and {} minus-region halfspaces violated)",
                plus_violated.len(),
                minus_violated.len()
            ),
            Error::SolverFailure(status) => write!(f, "cone solver failed: {status}"),
            Error::NumericalFailure(msg) => write!(f, "numerical failure: {msg}"),
            Error::NoFeasiblePoint { finest_spacing } => write!(
                f,
                "no feasible grid point found in the search box (finest spacing tried: {finest_spacing:.3e}); \
                 the problem is infeasible there or the grid is too coarse"
            ),
            Error::Schema(msg) => write!(f, "scenario error: {msg}"),
            Error::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
