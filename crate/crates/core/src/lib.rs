//! A single image-to-image network that performs style transfer, hides a
//! payload in a cover image, and recovers it when fed a trigger image.

pub mod config;
pub mod ecc;
mod error;
pub mod eval;
pub mod hider;
pub mod image_model;
pub mod losses;
pub mod message;
pub mod network;
pub mod nn;
pub mod steganalyzer;
pub mod style;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
