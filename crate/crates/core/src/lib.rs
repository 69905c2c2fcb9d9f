//! Solvers for dynamic collective choice: a population of linear agents,
//! coupled through their mean state, each steering to one of several
//! destinations while minimizing a shared quadratic social cost.
//!
//! [`centralized`] finds the exact optimum of a small population by
//! enumerating destination assignments. [`meanfield`] computes the
//! decentralized strategies of the large-population limit and
//! [`uniform`] does the same faster when all agents share one type.
//! [`population`] samples finite populations, runs the decentralized
//! strategies and prices them.

pub mod centralized;
pub mod cli;
pub mod error;
pub mod meanfield;
pub mod numerics;
pub mod population;
pub mod riccati;
pub mod scenario;
pub mod uniform;
