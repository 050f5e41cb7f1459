pub mod autodiff;
pub mod blocks;
pub mod cloud;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod training;
pub mod transport;

pub use cloud::PointCloud;
pub use error::{Error, Result};
