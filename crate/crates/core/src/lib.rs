pub mod config;
pub mod correspondence;
pub mod dense_tracking;
pub mod error;
pub mod evalkit;
pub mod features;
pub mod fixture;
pub mod imaging;
pub mod instance_tracking;
pub mod mask;
pub mod pipeline;
pub mod refine;
pub mod warp;

pub use error::{Error, Result};
