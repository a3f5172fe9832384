//! Fuse-and-refine: deposit, coarsen, sparsify, voxel transformer, fine head.

use std::borrow::Cow;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{RunConfig, TensorStore};
use crate::nn::{fine_head, voxel_transformer_forward};
use crate::primitives::PrimitiveSet;
use crate::voxel::{coarse_weights, deposit_weighted, embed_blocks, sparsify, CoarseGrid, FineGrid, VoxelGridConfig};

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub multiview: f64,
    pub deposit: f64,
    pub coarsen: f64,
    pub transformer: f64,
    pub head: f64,
    pub render: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.multiview + self.deposit + self.coarsen + self.transformer + self.head + self.render
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FuseSummary {
    pub splats_in: usize,
    pub splats_skipped: usize,
    pub occupied_fine: usize,
    pub occupied_coarse: usize,
    pub tokens: usize,
    pub retained_fine: usize,
    pub splats_out: usize,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, Default)]
pub struct FuseOptions {
    /// Zero the fine MLP so refined splats equal the fused voxel Gaussians.
    pub identity_head: bool,
    /// Overrides the configured keep fraction.
    pub keep_fraction: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FuseOutput {
    pub prims: PrimitiveSet,
    /// Fine grid restricted to retained blocks.
    pub fine: FineGrid,
    pub coarse: CoarseGrid,
    pub summary: FuseSummary,
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Deposits `prims` (with optional fusion multipliers) and refines the result.
pub fn fuse(
    prims: &PrimitiveSet,
    multipliers: Option<&[f64]>,
    grid: &VoxelGridConfig,
    run: &RunConfig,
    store: &TensorStore,
    opts: &FuseOptions,
) -> Result<FuseOutput> {
    let t = Instant::now();
    let fine = deposit_weighted(prims, multipliers, grid)?;
    let deposit = secs(t);
    let mut out = refine_grid(fine, grid, run, store, opts)?;
    out.summary.splats_in = prims.len();
    out.summary.timings.deposit = deposit;
    Ok(out)
}

/// Coarsens, sparsifies and refines an already deposited grid.
pub fn refine_grid(
    mut fine: FineGrid,
    grid: &VoxelGridConfig,
    run: &RunConfig,
    store: &TensorStore,
    opts: &FuseOptions,
) -> Result<FuseOutput> {
    if fine.is_empty() {
        return Err(Error::Numeric("no occupied voxels".into()));
    }
    let store: Cow<TensorStore> = if opts.identity_head {
        let mut s = store.clone();
        s.zero_prefix("mlp_fine.");
        Cow::Owned(s)
    } else {
        Cow::Borrowed(store)
    };
    let mut summary = FuseSummary {
        splats_skipped: fine.skipped,
        occupied_fine: fine.len(),
        ..FuseSummary::default()
    };

    let t = Instant::now();
    let mut coarse = coarse_weights(&fine, grid);
    sparsify(&mut coarse, opts.keep_fraction.unwrap_or(run.keep_fraction))?;
    coarse.feats = Some(embed_blocks(&fine, grid, &coarse.sparse_ids, &store)?);
    coarse.feat_ids = coarse.sparse_ids.clone();
    fine.retain_blocks(grid, &coarse.sparse_ids);
    summary.timings.coarsen = secs(t);
    summary.occupied_coarse = coarse.occupied.len();
    summary.tokens = coarse.sparse_ids.len();
    summary.retained_fine = fine.len();

    let t = Instant::now();
    let latents = voxel_transformer_forward(&coarse, &store, &run.voxel)?;
    summary.timings.transformer = secs(t);
    if !latents.is_finite() {
        return Err(Error::Numeric("voxel transformer produced non-finite latents".into()));
    }

    let t = Instant::now();
    let prims = fine_head(&latents, &coarse.sparse_ids, &fine, grid, &store)?;
    summary.timings.head = secs(t);
    if !prims.positions.iter().all(|p| p.iter().all(|v| v.is_finite())) {
        return Err(Error::Numeric("fine head produced non-finite positions".into()));
    }
    summary.splats_out = prims.len();
    Ok(FuseOutput {
        prims,
        fine,
        coarse,
        summary,
    })
}
