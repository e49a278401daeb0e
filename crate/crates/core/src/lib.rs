pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod corpus;
pub mod textprep;
pub mod encoder;
pub mod classifier;
pub mod model;
pub mod metrics;
pub mod trainer;
pub mod synthetic;
pub mod unified;
pub mod report;
