pub mod baselines;
pub mod color;
pub mod design;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod retarget;
pub mod sap;
pub mod synth;

pub use error::{Error, Result};
