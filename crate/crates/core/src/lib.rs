pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evidence;
pub mod metrics;
pub mod numerics;
pub mod ranking;
pub mod rng;
pub mod semantic;
pub mod trace;

pub use error::{Error, Result};
