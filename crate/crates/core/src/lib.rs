//! Certified global solutions for a class of non-convex optimal-control
//! problems.
//!
//! The pipeline condenses a constrained linear-dynamics problem to quadratic
//! functions of the stacked control ([`linsys`], [`quadform`]), detects a
//! uniform sign structure that makes the family almost off-diagonal
//! nonpositive ([`odnp`]), solves a second-order-cone moment relaxation that
//! is provably tight under that structure ([`socp`], [`cone`]), and recovers
//! and certifies a global minimizer. A brute-force grid search ([`oracle`])
//! cross-checks small instances, and [`sim`] runs the whole loop
//! receding-horizon style. Problem instances load from TOML documents
//! ([`scenario`]); three ship built in.

pub mod cone;
pub mod error;
pub mod linsys;
pub mod odnp;
pub mod oracle;
pub mod quadform;
pub mod scenario;
pub mod sim;
pub mod socp;

pub use error::{Error, Result};
