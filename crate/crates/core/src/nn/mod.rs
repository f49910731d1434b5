//! A small dense-tensor network engine: tape-based reverse-mode
//! differentiation, the re-stainer and discriminator, Adam, and the
//! checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod color;
mod conv;
pub mod graph;
pub mod models;
pub mod params;
pub mod tensor;

pub use adam::AdamState;
pub use checkpoint::{ModelCheckpoint, RestainModel};
pub use graph::{Graph, Unary, Var};
pub use models::{Discriminator, Generator};
pub use params::{Param, ParamSet};
pub use tensor::{Shape, Tensor};
