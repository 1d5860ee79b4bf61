//! Joint object skeleton and segmentation extraction over image collections.

pub mod error;
pub mod io;
pub mod maxflow;
pub mod eval;
pub mod flow;
pub mod gist;
pub mod gmm;
pub mod neighbors;
pub mod pipeline;
pub mod prior;
pub mod prune;
pub mod segment;
pub mod raster;
pub mod saliency;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};
