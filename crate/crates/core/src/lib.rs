pub mod attacks;
pub mod audit;
pub mod augment;
pub mod config;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
pub use rng::SeededRng;
