//! Query-driven amodal completion: given an image and a text query, rebuild
//! the full appearance of the named object, including its hidden parts, as an
//! RGBA layer.

pub mod completion;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod mask;
pub mod occlusion;
pub mod par;
pub mod prompting;
pub mod providers;
pub mod scene_analysis;
pub mod synth;

pub use error::{Error, Result};
