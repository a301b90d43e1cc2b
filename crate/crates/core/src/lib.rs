//! Heteroclinic-chain shadowing for toy-model lattices.
//!
//! Modules follow the pipeline: [`model`] (vector fields), [`chart`] (local
//! coordinates and transitions), [`integrate`] (ODE engine), [`enclosure`]
//! (monomial calculus and tube estimates), [`hset`] (h-sets and covering
//! relations) and [`shadow`] (the covering chain and the shooting search).

pub mod chart;
pub mod enclosure;
pub mod hp;
pub mod hset;
pub mod integrate;
pub mod model;
pub mod plot;
pub mod portrait;
pub mod qd;
pub mod scalar;
pub mod shadow;
