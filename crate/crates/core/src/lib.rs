//! Palm-vein verification: synthetic data, learned image transforms, a
//! triplet-trained Siamese embedder and the evaluation harness.

pub mod ced;
pub mod config;
pub mod e2e;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod image;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod train;
pub mod transforms;
pub mod triplet;
pub mod weights;

pub use error::{Error, Result};
pub use image::Image;
pub use tensorcore;
