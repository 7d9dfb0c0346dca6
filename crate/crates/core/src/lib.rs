pub mod active;
pub mod committee;
pub mod data;
pub mod error;
pub mod experiment;
pub mod floatfmt;
pub mod forest;
pub mod metrics;
pub mod rashomon;
pub mod seeding;
pub mod strategy;
pub mod tree;

pub use error::{Error, Result};
