//! Residual fine head: refines each retained fine voxel's fused Gaussian into one splat.

use nalgebra::Vector3;

use super::mlp::MlpWeights;
use super::ops::TokenMatrix;
use crate::error::{Error, Result};
use crate::primitives::{layout, softplus, PrimitiveSet};
use crate::voxel::{FineGrid, VoxelGridConfig};

/// Log-scale bounds of refined splats (scales in `[1e-4, 0.5]` scene units).
pub const MIN_LOG_SCALE: f64 = -9.210_340_371_976_182;
pub const MAX_LOG_SCALE: f64 = -std::f64::consts::LN_2;

/// Logit of `1 - (1 - sigmoid(o))^c`: the opacity of `c` stacked copies of a splat.
pub fn stacked_opacity_logit(o: f64, c: f64) -> f64 {
    if c == 1.0 {
        return o;
    }
    let sp = c * softplus(o);
    (-(-sp).exp_m1()).ln() + sp
}

/// Maps raw refined parameters of voxel `idx` onto valid splat parameters in place.
///
/// Positions are clamped to the voxel's kernel support (its center plus or minus one voxel
/// spacing per NDC axis) and left untouched when already inside; opacity is converted to
/// the voxel's coverage; log-scales are clamped.
pub fn activate_voxel_gaussian(g: &mut [f64], cfg: &VoxelGridConfig, idx: usize, coverage: f64) {
    use layout::*;
    let p = Vector3::new(g[POSITION], g[POSITION + 1], g[POSITION + 2]);
    let center = cfg.voxel_center(idx);
    let [hz, hy, hx] = cfg.spacing();
    let h = Vector3::new(hx, hy, hz);
    let c = cfg.camera.to_camera(&p);
    let clamped = if c.z > 0.0 {
        let ndc = Vector3::new(
            (cfg.camera.fx * c.x / c.z + cfg.camera.cx) / cfg.camera.width as f64,
            (cfg.camera.fy * c.y / c.z + cfg.camera.cy) / cfg.camera.height as f64,
            cfg.depth_to_ndc(c.z),
        );
        let inside = (0..3).all(|a| (ndc[a] - center[a]).abs() <= h[a] * (1.0 + 1e-9));
        (!inside).then(|| {
            let lo = center - h;
            let hi = center + h;
            cfg.ndc_to_world(&ndc.sup(&lo).inf(&hi))
        })
    } else {
        Some(cfg.ndc_to_world(&center))
    };
    if let Some(q) = clamped {
        g[POSITION..POSITION + 3].copy_from_slice(&[q.x, q.y, q.z]);
    }
    g[OPACITY] = stacked_opacity_logit(g[OPACITY], coverage);
    for s in &mut g[LOG_SCALE..LOG_SCALE + 3] {
        *s = s.clamp(MIN_LOG_SCALE, MAX_LOG_SCALE);
    }
}

/// One splat per occupied voxel from the fused attributes alone (no refinement).
pub fn voxel_splats(fine: &FineGrid, cfg: &VoxelGridConfig) -> PrimitiveSet {
    let fdim = fine.feature_dim;
    let mut out = PrimitiveSet::new(fine.sh_degree, (fdim > 0).then_some(fdim));
    let mut g = vec![0.0; layout::gaussian_dim(fine.sh_degree)];
    for k in 0..fine.len() {
        g.copy_from_slice(fine.gaussian(k));
        activate_voxel_gaussian(&mut g, cfg, fine.indices[k], fine.coverage[k]);
        out.push_gaussian(&g, &fine.attr(k)[..fdim]);
    }
    out
}

/// Refines every voxel of `fine` (already restricted to retained blocks) using the latent
/// of its parent block: `G' = G + MLP_fine([O ; E])`, then activation.
///
/// `latents` has one row per entry of `latent_ids` (ascending block ids).
pub fn fine_head(
    latents: &TokenMatrix,
    latent_ids: &[usize],
    fine: &FineGrid,
    cfg: &VoxelGridConfig,
    store: &crate::io::TensorStore,
) -> Result<PrimitiveSet> {
    let a = fine.attr_dim();
    let c = latents.cols;
    let lg = layout::gaussian_dim(fine.sh_degree);
    let mlp = MlpWeights::load(store, "mlp_fine", c + a, lg)?;
    let mut x = TokenMatrix::zeros(fine.len(), c + a);
    for k in 0..fine.len() {
        let b = cfg.block_of(fine.indices[k]).0;
        let row = latent_ids.binary_search(&b).map_err(|_| {
            Error::Shape(format!("fine voxel {} lies outside the retained blocks", fine.indices[k]))
        })?;
        let xr = x.row_mut(k);
        xr[..c].copy_from_slice(latents.row(row));
        for (d, v) in xr[c..].iter_mut().zip(fine.attr(k)) {
            *d = *v as f32;
        }
    }
    let delta = mlp.forward(&x)?;

    let fdim = fine.feature_dim;
    let mut out = PrimitiveSet::new(fine.sh_degree, (fdim > 0).then_some(fdim));
    let mut g = vec![0.0; lg];
    for k in 0..fine.len() {
        for ((o, base), d) in g.iter_mut().zip(fine.gaussian(k)).zip(delta.row(k)) {
            *o = base + *d as f64;
        }
        activate_voxel_gaussian(&mut g, cfg, fine.indices[k], fine.coverage[k]);
        out.push_gaussian(&g, &fine.attr(k)[..fdim]);
    }
    Ok(out)
}
