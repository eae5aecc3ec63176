//! Desk-scale smart doorbell: a dash button press becomes an entry request,
//! the owner grants or denies it remotely, and the edge opens the door.
//!
//! Everything here is sans-IO: the edge controller and the coordinator are
//! state machines fed with messages and timestamps. The [`sim`] runner wires
//! them together under a scripted clock; the `dashbell` binary crate wires
//! them to real sockets.

pub mod config;
pub mod device_sim;
pub mod edge;
pub mod fault;
pub mod model;
pub mod protocol;
pub mod server;
pub mod sim;
pub mod store;
