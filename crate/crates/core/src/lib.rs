//! Deterministic iterated prisoner's dilemma laboratory.

pub mod agent;
pub mod experiments;
pub mod game;
pub mod metrics;
pub mod rng;
pub mod strategy;
