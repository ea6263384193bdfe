//! Simulator, safety layer, primitive evaluation and dataset tooling for a
//! tri-leg magnetic soft robot driven by a three-axis coil rig.

pub mod actuation;
pub mod codec;
pub mod config;
pub mod episode;
pub mod eval;
pub mod expert;
pub mod primitive;
pub mod prompts;
pub mod render;
pub mod robot;
pub mod rollout;
