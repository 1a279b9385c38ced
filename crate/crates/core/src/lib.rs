pub mod bounds;
pub mod cli;
pub mod data;
pub mod encoders;
pub mod error;
pub mod fields;
pub mod flows;
pub mod interval;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod sampling;
pub mod train;

pub use error::{Error, Result};
