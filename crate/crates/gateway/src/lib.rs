//! Session server, external-policy bridge and command-line front end for the
//! tri-leg simulator in `trileg-core`.

pub mod cli;
pub mod frames;
pub mod protocol;
pub mod remote;
pub mod server;
pub mod session;
