pub mod agent;
pub mod encoding;
pub mod error;
pub mod harness;
pub mod imitator;
pub mod model;
pub mod neural;
pub mod quantizer;
pub mod simnet;
pub mod stats;

pub use error::{Error, Result};
pub use model::*;
