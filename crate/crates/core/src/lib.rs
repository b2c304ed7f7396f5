pub mod cli;
pub mod composite;
pub mod error;
pub mod integrator;
pub mod onsager;
pub mod op_space;
pub mod random;
pub mod single;

pub use error::{Result, SeaError};
