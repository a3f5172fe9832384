//! Coarse blocks: summed weights, MLP-pooled features and top-k sparsification.

use super::fine::FineGrid;
use super::VoxelGridConfig;
use crate::error::{Error, Result};
use crate::io::TensorStore;
use crate::nn::mlp::MlpWeights;
use crate::nn::ops::TokenMatrix;

/// Rows fed to the coarse MLP at a time.
const EMBED_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGrid {
    pub dims: [usize; 3],
    /// Occupied block ids, ascending.
    pub occupied: Vec<usize>,
    /// `W_i` aligned with `occupied`.
    pub weights: Vec<f64>,
    /// Retained block ids, ascending; equals `occupied` until sparsified.
    pub sparse_ids: Vec<usize>,
    /// Pooled features, one row per entry of `feat_ids`.
    pub feats: Option<TokenMatrix>,
    pub feat_ids: Vec<usize>,
}

impl CoarseGrid {
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn weight_of(&self, block: usize) -> f64 {
        self.occupied
            .binary_search(&block)
            .map_or(0.0, |k| self.weights[k])
    }

    /// Feature rows for `ids`, in that order.
    pub fn tokens(&self, ids: &[usize]) -> Result<TokenMatrix> {
        let feats = self
            .feats
            .as_ref()
            .ok_or_else(|| Error::Invalid("coarse features not computed".into()))?;
        let rows = ids
            .iter()
            .map(|id| {
                self.feat_ids
                    .binary_search(id)
                    .map_err(|_| Error::Invalid(format!("no coarse feature for block {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(feats.gather_rows(&rows))
    }
}

/// Occupied fine voxels grouped by block: `(block, offset, k)` sorted by block then offset.
fn block_entries(fine: &FineGrid, cfg: &VoxelGridConfig) -> Vec<(usize, usize, usize)> {
    let mut e: Vec<(usize, usize, usize)> = fine
        .indices
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let (b, o) = cfg.block_of(i);
            (b, o, k)
        })
        .collect();
    e.sort_unstable();
    e
}

/// Block weights `W_i = sum_{j in block} W_j`, summed in z-major order within each block.
pub fn coarse_weights(fine: &FineGrid, cfg: &VoxelGridConfig) -> CoarseGrid {
    let mut occupied = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (b, _, k) in block_entries(fine, cfg) {
        if occupied.last() != Some(&b) {
            occupied.push(b);
            weights.push(0.0);
        }
        *weights.last_mut().unwrap() += fine.weights[k];
    }
    CoarseGrid {
        dims: cfg.coarse_dims(),
        sparse_ids: occupied.clone(),
        occupied,
        weights,
        feats: None,
        feat_ids: Vec::new(),
    }
}

/// `sum_i (sum_{j in block i} W_j)` over blocks in ascending order: the traversal that
/// coarse totals reproduce bit for bit.
pub fn fine_total_block_order(fine: &FineGrid, cfg: &VoxelGridConfig) -> f64 {
    let mut total = 0.0;
    let mut cur = None;
    let mut acc = 0.0;
    for (b, _, k) in block_entries(fine, cfg) {
        if cur != Some(b) {
            if cur.is_some() {
                total += acc;
            }
            cur = Some(b);
            acc = 0.0;
        }
        acc += fine.weights[k];
    }
    if cur.is_some() {
        total += acc;
    }
    total
}

/// Keeps the `ceil(keep * M)` heaviest occupied blocks, ties to the lower id.
pub fn sparsify(coarse: &mut CoarseGrid, keep_fraction: f64) -> Result<()> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Config(format!("keep_fraction must be in (0, 1], got {keep_fraction}")));
    }
    let m = coarse.occupied.len();
    let k = ((keep_fraction * m as f64 - 1e-9).ceil() as usize).min(m);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        coarse.weights[b]
            .total_cmp(&coarse.weights[a])
            .then(coarse.occupied[a].cmp(&coarse.occupied[b]))
    });
    let mut ids: Vec<usize> = order[..k].iter().map(|&i| coarse.occupied[i]).collect();
    ids.sort_unstable();
    coarse.sparse_ids = ids;
    Ok(())
}

/// Pools each block in `blocks` (ascending) through `mlp_coarse` over the concatenation of
/// its fine attribute vectors in z, y, x order (unoccupied voxels contribute zeros).
pub fn embed_blocks(fine: &FineGrid, cfg: &VoxelGridConfig, blocks: &[usize], store: &TensorStore) -> Result<TokenMatrix> {
    let a = fine.attr_dim();
    let bl = cfg.block_len();
    let input = bl * a;
    let probe = store
        .get("mlp_coarse.w1")
        .ok_or_else(|| Error::Shape("missing tensor mlp_coarse.w1".into()))?;
    let mlp = MlpWeights::load(store, "mlp_coarse", input, probe.dims[0])?;
    let out_dim = mlp.output_dim();

    let entries = block_entries(fine, cfg);
    let mut out = TokenMatrix::zeros(blocks.len(), out_dim);
    let mut e = 0;
    for (c0, chunk) in blocks.chunks(EMBED_CHUNK).enumerate() {
        let mut x = TokenMatrix::zeros(chunk.len(), input);
        for (r, &b) in chunk.iter().enumerate() {
            while e < entries.len() && entries[e].0 < b {
                e += 1;
            }
            while e < entries.len() && entries[e].0 == b {
                let (_, o, k) = entries[e];
                let row = x.row_mut(r);
                for (d, v) in row[o * a..(o + 1) * a].iter_mut().zip(fine.attr(k)) {
                    *d = *v as f32;
                }
                e += 1;
            }
        }
        let y = mlp.forward(&x)?;
        let start = c0 * EMBED_CHUNK * out_dim;
        out.data[start..start + y.data.len()].copy_from_slice(&y.data);
    }
    Ok(out)
}

/// Block weights plus pooled features of every occupied block.
pub fn coarsen(fine: &FineGrid, cfg: &VoxelGridConfig, store: &TensorStore) -> Result<CoarseGrid> {
    let mut c = coarse_weights(fine, cfg);
    c.feats = Some(embed_blocks(fine, cfg, &c.occupied, store)?);
    c.feat_ids = c.occupied.clone();
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Camera;
    use crate::io::Tensor;
    use crate::nn::init::{init_mlp, Init};
    use crate::primitives::{PrimitiveSet, Splat};
    use crate::voxel::deposit_splats;
    use nalgebra::{Matrix4, Vector3};
    use rand::{Rng, SeedableRng};

    fn cfg() -> VoxelGridConfig {
        let cam = Camera {
            fx: 40.0,
            fy: 40.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
            world_to_camera: Matrix4::identity(),
            near: 1.0,
            far: 10.0,
        };
        VoxelGridConfig::new(&cam, [8, 16, 16], [2, 4, 4]).unwrap()
    }

    fn scene(seed: u64, n: usize, c: &VoxelGridConfig) -> PrimitiveSet {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let splats: Vec<Splat> = (0..n)
            .map(|_| {
                let nd = Vector3::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
                let mut s = Splat::isotropic(c.ndc_to_world(&nd), rng.gen_range(0.05..0.95), 0.05, [rng.gen(), rng.gen(), rng.gen()]);
                s.features = vec![rng.gen_range(-1.0..1.0); 2];
                s
            })
            .collect();
        PrimitiveSet::from_splats(0, &splats).unwrap()
    }

    fn manual_coarse(weights: &[f64]) -> CoarseGrid {
        let occupied: Vec<usize> = (0..weights.len()).map(|i| i * 3 + 1).collect();
        CoarseGrid {
            dims: [1, 1, 1],
            sparse_ids: occupied.clone(),
            occupied,
            weights: weights.to_vec(),
            feats: None,
            feat_ids: Vec::new(),
        }
    }

    #[test]
    fn empty_grid_has_no_blocks() {
        let c = cfg();
        let fine = deposit_splats(&PrimitiveSet::new(0, None), &c);
        let coarse = coarse_weights(&fine, &c);
        assert!(coarse.occupied.is_empty());
        assert_eq!(coarse.total_weight(), 0.0);
    }

    #[test]
    fn weight_is_conserved() {
        let c = cfg();
        let fine = deposit_splats(&scene(1, 300, &c), &c);
        let coarse = coarse_weights(&fine, &c);
        assert_eq!(coarse.total_weight().to_bits(), fine_total_block_order(&fine, &c).to_bits());
        assert!((coarse.total_weight() - fine.total_weight()).abs() <= 1e-12 * fine.total_weight());
    }

    #[test]
    fn top_k_and_ties() {
        let mut c = manual_coarse(&[0.3, 0.9, 0.1, 0.5, 0.7, 0.2, 0.8, 0.4, 0.6, 0.05]);
        sparsify(&mut c, 0.2).unwrap();
        assert_eq!(c.sparse_ids, vec![1 * 3 + 1, 6 * 3 + 1]);
        let mut eq = manual_coarse(&[1.0; 10]);
        sparsify(&mut eq, 0.2).unwrap();
        assert_eq!(eq.sparse_ids, vec![1, 4]);
        assert!(sparsify(&mut eq, 0.0).is_err());
    }

    #[test]
    fn dl3dv_scale_token_budget() {
        let n = 32 * 27 * 48;
        let mut c = manual_coarse(&vec![1.0; n]);
        sparsify(&mut c, 0.2).unwrap();
        assert_eq!(c.sparse_ids.len(), 8295);
    }

    #[test]
    fn mean_pooling_map_gives_block_means() {
        let c = cfg();
        let fine = deposit_splats(&scene(2, 50, &c), &c);
        let a = fine.attr_dim();
        let bl = c.block_len();
        let hidden = a + 3;
        let mut store = TensorStore::new();
        init_mlp(&mut store, "mlp_coarse", bl * a, 4, hidden, &mut Init::uniform(0, 0.1));
        store.zero_prefix("mlp_coarse.w");
        let mut skip = vec![0.0f32; hidden * bl * a];
        for r in 0..a {
            for b in 0..bl {
                skip[r * bl * a + b * a + r] = 1.0 / bl as f32;
            }
        }
        store.insert("mlp_coarse.skip", Tensor::new(vec![hidden, bl * a], skip).unwrap());
        let coarse = coarsen(&fine, &c, &store).unwrap();
        for (row, &b) in coarse.occupied.iter().enumerate() {
            let mut mean = vec![0.0f64; a];
            for o in 0..bl {
                if let Some(k) = fine.find(c.fine_of(b, o)) {
                    for (m, v) in mean.iter_mut().zip(fine.attr(k)) {
                        *m += v / bl as f64;
                    }
                }
            }
            let got = coarse.feats.as_ref().unwrap().row(row);
            for d in 0..a {
                assert!((got[d] as f64 - mean[d]).abs() < 1e-4 * mean[d].abs().max(1.0));
            }
            assert!(got[a..].iter().all(|&v| v == 0.0));
        }
    }
}
