pub mod cache;
pub mod classifier;
pub mod descriptor;
pub mod encoding;
pub mod error;
pub mod flow;
mod imgproc;
pub mod motion;
pub mod pipeline;
pub mod segmentation;
pub mod trajectory;
pub mod video;

pub use error::{Error, Result};
