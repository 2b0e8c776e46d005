pub mod error;
pub mod image;
pub mod data;
pub mod diagnostics;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod spectrum;
pub mod training;

pub use error::{Error, Result};
pub use image::Image;
