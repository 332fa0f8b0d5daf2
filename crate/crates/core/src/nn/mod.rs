//! The noise-prediction network and its building blocks.

pub mod embedding;
pub mod freeu;
pub mod graph;
pub mod params;
pub mod unet;

pub use freeu::FreeUConfig;
pub use graph::{NodeId, Tape};
pub use params::ParamStore;
pub use unet::{RoadUNet, UNetConfig};
