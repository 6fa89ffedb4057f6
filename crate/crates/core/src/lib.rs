//! Round-based simulator of federated learning across fog nodes, comparing
//! attentive federated averaging against plain federated averaging under
//! injected concept drift.

pub mod aggregation;
pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod gradcheck;
pub mod models;
pub mod params;
pub mod rng;
pub mod switching;

pub use error::{Error, Result};
