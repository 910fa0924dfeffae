//! Hamiltonian lifts of dynamical systems and controlled canonical mappings.
//!
//! A system `ẋ = f(x, t)` is lifted to the canonical pair `ẋ = f`,
//! `λ̇ = −Aᵀλ` with Hamiltonian `H = λ·f`. A controlling function `U(x, λ, t)`
//! defines mappings such as `y = x + U_λ`, `μ = λ − U_x`, whose canonicity is
//! checked by independent numerical verifiers.

pub mod error;
pub mod hamilton;
pub mod invariants;
pub mod liemap;
pub mod mapping;
pub mod numeric;
pub mod phasecore;
pub mod scenarios;

pub use error::{Error, Result};
pub use mapping::{MapVariant, MappingSpec, Sign, Verdict};
pub use phasecore::{ControllingFunction, DynamicSystem, Matrix, PhaseState, Trajectory, Vector};
