//! Stain normalization for H&E histopathology images by digital re-staining.
//!
//! An input tile is de-stained to its Lab luminance, its hematoxylin and eosin
//! concentrations are recovered by Beer–Lambert colour deconvolution, and a
//! small convolutional re-stainer trained on the target domain regenerates
//! colour from `(L, H, E)`. Classical Reinhard and Macenko normalizers and a
//! full-reference quality-metric suite are included for comparison.

pub mod baselines;
pub mod colorspace;
mod error;
pub mod experiments;
pub mod image;
pub mod losses;
mod mat3;
pub mod metrics;
pub mod nn;
pub mod stain;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use image::{PlaneImage, RgbImage};
pub use stain::{OdParams, StainImage, StainMatrix};
