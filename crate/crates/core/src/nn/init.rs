//! Deterministic random weight initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::transformer::layer_name;
use crate::io::{RunConfig, Tensor, TensorStore, TransformerConfig};
use crate::primitives::layout;

/// Seeded `uniform(-scale, scale)` matrices; LayerNorm gains start at one.
pub struct Init {
    rng: ChaCha8Rng,
    scale: f32,
}

impl Init {
    pub fn uniform(seed: u64, scale: f32) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            scale,
        }
    }

    pub fn matrix(&mut self, dims: Vec<usize>) -> Tensor {
        let n = dims.iter().product();
        let s = self.scale;
        let data = (0..n).map(|_| self.rng.gen_range(-s..s)).collect();
        Tensor { dims, data }
    }
}

/// Default init scale.
pub const INIT_SCALE: f32 = 0.02;

pub fn init_transformer(store: &mut TensorStore, prefix: &str, cfg: &TransformerConfig, init: &mut Init) {
    let c = cfg.hidden;
    let f = cfg.ffn_dim();
    for l in 0..cfg.layers {
        let name = |t: &str| layer_name(prefix, l, t);
        store.insert(name("ln0"), Tensor::new(vec![c], vec![1.0; c]).unwrap());
        for w in ["wq", "wk", "wv", "wo"] {
            store.insert(name(w), init.matrix(vec![c, c]));
        }
        store.insert(name("ln1"), Tensor::new(vec![c], vec![1.0; c]).unwrap());
        store.insert(name("ffn0"), init.matrix(vec![f, c]));
        store.insert(name("ffn1"), init.matrix(vec![c, f]));
        if cfg.qk_norm {
            let s = (cfg.head_dim() as f32).sqrt();
            store.insert(name("qk_scale"), Tensor::new(vec![cfg.heads], vec![s; cfg.heads]).unwrap());
        }
    }
}

/// Two-layer MLP `prefix.{ln, w0, w1}` plus `prefix.skip` when input and output widths differ.
pub fn init_mlp(store: &mut TensorStore, prefix: &str, input: usize, hidden: usize, output: usize, init: &mut Init) {
    store.insert(format!("{prefix}.ln"), Tensor::new(vec![input], vec![1.0; input]).unwrap());
    store.insert(format!("{prefix}.w0"), init.matrix(vec![hidden, input]));
    store.insert(format!("{prefix}.w1"), init.matrix(vec![output, hidden]));
    if input != output {
        store.insert(format!("{prefix}.skip"), init.matrix(vec![output, input]));
    }
}

/// Weights of the fuse-and-refine stage for splats carrying `feature_dim` features.
pub fn voxel_weights(cfg: &RunConfig, feature_dim: usize, seed: u64) -> TensorStore {
    let mut store = TensorStore::new();
    let mut init = Init::uniform(seed, INIT_SCALE);
    let attr = feature_dim + layout::gaussian_dim(cfg.sh_degree);
    let block: usize = cfg.coarse_factors.iter().product();
    let c = cfg.voxel.hidden;
    init_mlp(&mut store, "mlp_coarse", block * attr, cfg.mlp_coarse_hidden, c, &mut init);
    init_transformer(&mut store, "vox", &cfg.voxel, &mut init);
    init_mlp(
        &mut store,
        "mlp_fine",
        c + attr,
        cfg.mlp_fine_hidden,
        layout::gaussian_dim(cfg.sh_degree),
        &mut init,
    );
    store
}

/// Weights of the pixel-aligned multi-view predictor.
pub fn multiview_weights(cfg: &RunConfig, seed: u64) -> TensorStore {
    let mut store = TensorStore::new();
    let mut init = Init::uniform(seed, INIT_SCALE);
    let p2 = cfg.patch_size * cfg.patch_size;
    let c = cfg.multiview.hidden;
    store.insert("mv.embed", init.matrix(vec![c, super::multiview::PIXEL_CHANNELS * p2]));
    init_transformer(&mut store, "mv", &cfg.multiview, &mut init);
    store.insert("head.out", init.matrix(vec![p2 * super::multiview::raw_width(cfg), c]));
    store
}

/// Both weight groups in one store.
pub fn all_weights(cfg: &RunConfig, seed: u64) -> TensorStore {
    let mut store = multiview_weights(cfg, seed);
    for (k, t) in voxel_weights(cfg, cfg.feature_dim, seed.wrapping_add(1)).iter() {
        store.insert(k, t.clone());
    }
    store
}
