//! File formats: PLY primitives with feature sidecars, tensor stores and run configs.
//! Camera sets live in [`crate::camera`] and images in [`crate::image`].

pub mod config;
pub mod ply;
pub mod tensor_store;

pub use config::{RunConfig, TransformerConfig};
pub use ply::{load_primitives, save_primitives};
pub use tensor_store::{load_tensor_store, Tensor, TensorStore};
