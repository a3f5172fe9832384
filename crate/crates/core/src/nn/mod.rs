//! Forward passes of the learned components.
//!
//! Tensor names: `mv.embed`, `mv.layer{i}.*`, `head.out`, `mlp_coarse.{ln,w0,w1[,skip]}`,
//! `vox.layer{i}.{ln0,wq,wk,wv,wo,ln1,ffn0,ffn1,qk_scale}`, `mlp_fine.{ln,w0,w1[,skip]}`.

pub mod head;
pub mod init;
pub mod mlp;
pub mod multiview;
pub mod ops;
pub mod transformer;

pub use head::{fine_head, voxel_splats};
pub use multiview::multiview_forward;
pub use ops::TokenMatrix;
pub use transformer::{transformer_forward, transformer_layer};

use crate::error::{Error, Result};
use crate::io::{TensorStore, TransformerConfig};
use crate::voxel::CoarseGrid;

/// Runs the voxel transformer over the retained blocks; rows align with `sparse_ids`.
pub fn voxel_transformer_forward(coarse: &CoarseGrid, store: &TensorStore, cfg: &TransformerConfig) -> Result<TokenMatrix> {
    if coarse.sparse_ids.is_empty() {
        return Err(Error::Numeric("no occupied voxels".into()));
    }
    let x = coarse.tokens(&coarse.sparse_ids)?;
    if x.cols != cfg.hidden {
        return Err(Error::Shape(format!(
            "coarse features have width {}, voxel transformer expects {}",
            x.cols, cfg.hidden
        )));
    }
    transformer_forward(&x, store, "vox", cfg)
}
