//! Probabilistic calculus of cyber-physical systems.

#![allow(clippy::type_complexity)]

pub mod casestudy;
pub mod dist;
pub mod explore;
pub mod gen;
pub mod metric;
pub mod modeldsl;
pub mod physics;
pub mod scalar;
pub mod semantics;
pub mod syntax;
pub mod transport;
pub mod value;
pub mod weakstep;
