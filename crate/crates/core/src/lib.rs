//! Hard-sphere kinetic theory toolkit: exact finite-particle dynamics,
//! cluster expansions of the evolution operators, and the collision integrals
//! of the generalized Enskog equation.

pub mod bounds;
pub mod collision;
pub mod cumulant;
pub mod distribution;
pub mod error;
pub mod flow;
pub mod mc;
pub mod operators;
pub mod oracle;
pub mod quadrature;
pub mod series;

pub use error::{FlowError, KineticError, Result};
pub use flow::{Dynamics, PhasePoint, SystemState};
