//! Numerical toolkit for the statistical equilibrium of isolated N-body
//! systems with confining pair interactions: finite-N symplectic dynamics
//! with its isolating invariants, constrained microcanonical sampling,
//! mean-field maximum-entropy fixed points, Vlasov evolution with Casimir
//! audits, and Kantorovich-Rubinstein distances tying the two descriptions
//! together.

pub mod error;
pub mod nbody;
pub mod potentials;
pub mod vlasov;
pub mod statefield;
pub mod maxent;
pub mod transport;
pub mod util;

pub use error::{Error, Result};
pub use nbody::{EmpiricalMeasure, InvariantSet, PhaseState};
pub use potentials::{check_hypotheses, HypothesisReport, PairPotential, ProbeGrid};
pub use statefield::{AxisSpec, GridDensity, PhaseGrid};
