//! Compressed arbitrary-style-transfer with perceptual-quality-guided
//! distillation: metric, networks, losses, training loop, export and
//! temporal evaluation tooling.

pub mod ad;
pub mod archive;
pub mod data;
pub mod elem;
pub mod error;
pub mod eval;
pub mod flip;
pub mod imageio;
pub mod inference;
pub mod losses;
pub mod nn;
pub mod onnx;
pub mod train;

pub use elem::Elem;
pub use error::{Error, Result};
