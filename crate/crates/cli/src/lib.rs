//! Network runtime and command-line tools for the Dashbell doorbell.

pub mod cli;
pub mod client;
pub mod edge_rt;
pub mod serve;
