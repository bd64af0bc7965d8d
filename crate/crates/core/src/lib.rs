//! Mirror descent on homogeneous networks, with margin, balance and
//! convergence diagnostics.

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod io;
pub mod network;
pub mod potentials;
pub mod sweep;

pub use error::{Error, Result};
