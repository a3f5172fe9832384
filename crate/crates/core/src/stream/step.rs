//! Per-frame streaming driver.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use super::fusion::{error_aware_weights, scale_opacity, stencil_voxels};
use super::schedule::KeyframeSchedule;
use super::tracker::Tracker;
use super::warp::{warp_keyframe, Keyframe, WarpParams};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::io::{load_primitives, RunConfig, TensorStore};
use crate::nn::multiview_forward;
use crate::pipeline::{refine_grid, FuseOptions, FuseSummary};
use crate::primitives::PrimitiveSet;
use crate::raster::render;
use crate::voxel::{deposit_weighted, VoxelGridConfig};

/// Source of the current frame's splats.
pub trait SplatPredictor: Send + Sync {
    fn predict(&self, frame: usize, images: &[ImageBuffer], cams: &[Camera]) -> Result<PrimitiveSet>;
}

/// The pixel-aligned multi-view network.
pub struct MultiviewPredictor {
    pub store: TensorStore,
    pub cfg: RunConfig,
}

impl SplatPredictor for MultiviewPredictor {
    fn predict(&self, _frame: usize, images: &[ImageBuffer], cams: &[Camera]) -> Result<PrimitiveSet> {
        multiview_forward(images, cams, &self.store, &self.cfg)
    }
}

/// Reads `frame_{t:04}.ply` (plus an optional `frame_{t:04}.features.bin` sidecar) from a
/// directory.
pub struct OraclePredictor {
    pub dir: PathBuf,
}

impl OraclePredictor {
    pub fn frame_path(&self, frame: usize) -> PathBuf {
        self.dir.join(format!("frame_{frame:04}.ply"))
    }
}

impl SplatPredictor for OraclePredictor {
    fn predict(&self, frame: usize, _images: &[ImageBuffer], _cams: &[Camera]) -> Result<PrimitiveSet> {
        let ply = self.frame_path(frame);
        let side = ply.with_extension("features.bin");
        load_primitives(&ply, side.exists().then_some(side.as_path()))
    }
}

/// Everything a stream run needs besides its mutable state.
pub struct StreamContext<'a> {
    pub run: &'a RunConfig,
    /// Grid in the target camera's frustum.
    pub grid: &'a VoxelGridConfig,
    pub cams: &'a [Camera],
    pub target: &'a Camera,
    pub voxel_store: &'a TensorStore,
    pub tracker: &'a dyn Tracker,
    pub predictor: &'a dyn SplatPredictor,
    pub options: FuseOptions,
}

#[derive(Debug, Clone)]
pub struct StreamState {
    pub schedule: KeyframeSchedule,
    /// Oldest first.
    pub keyframes: Vec<Keyframe>,
    /// Next frame index.
    pub frame: usize,
}

impl StreamState {
    pub fn new(schedule: KeyframeSchedule) -> Self {
        StreamState {
            schedule,
            keyframes: Vec::new(),
            frame: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StepSummary {
    pub frame: usize,
    pub splats_current: usize,
    pub splats_history: usize,
    pub anchors: usize,
    pub triangulated: usize,
    pub suppressed_history: usize,
    pub suppressed_current: usize,
    pub static_voxels: usize,
    pub keyframes: usize,
    pub warp_seconds: f64,
    pub fusion_weight_seconds: f64,
    pub fuse: FuseSummary,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub prims: PrimitiveSet,
    pub render: ImageBuffer,
    pub summary: StepSummary,
}

/// Processes the next frame: predict, warp history, weight, deposit, refine, render, and
/// update keyframes.
pub fn stream_step(state: &mut StreamState, ctx: &StreamContext, images: &[ImageBuffer]) -> Result<StepOutput> {
    let t = state.frame;
    let mut summary = StepSummary {
        frame: t,
        ..StepSummary::default()
    };

    let clock = Instant::now();
    let curr = ctx.predictor.predict(t, images, ctx.cams)?;
    let multiview_secs = clock.elapsed().as_secs_f64();
    summary.splats_current = curr.len();

    // Warp the live keyframes; only splats that moved are re-deposited.
    let clock = Instant::now();
    let params = WarpParams::from_config(ctx.run);
    let history = state.schedule.history(t);
    let mut moved = Vec::new();
    let mut blend = Vec::new();
    for sk in &history {
        let Some(kf) = state.keyframes.iter_mut().find(|k| k.created == sk.created) else {
            continue;
        };
        let w = warp_keyframe(kf, ctx.tracker, ctx.cams, t, &params)?;
        summary.anchors += w.anchors;
        summary.triangulated += w.triangulated;
        if !w.deformed.is_empty() {
            blend.extend(std::iter::repeat(sk.blend).take(w.deformed.len()));
            moved.push(w.warped.subset(&w.deformed));
        }
    }
    summary.warp_seconds = clock.elapsed().as_secs_f64();
    let hist = if moved.is_empty() {
        None
    } else {
        Some(PrimitiveSet::concat(&moved.iter().collect::<Vec<_>>())?)
    };
    summary.splats_history = hist.as_ref().map_or(0, |h| h.len());

    let clock = Instant::now();
    let (fused, multipliers) = match &hist {
        None => (curr.clone(), None),
        Some(h) => {
            let shown = scale_opacity(h, &blend);
            let fw = error_aware_weights(&shown, &curr, images, ctx.cams, ctx.run.background)?;
            summary.suppressed_history = fw.hist.iter().filter(|&&m| m == 0.0).count();
            summary.suppressed_current = fw.curr.iter().filter(|&&m| m == 0.0).count();
            let mut m = fw.curr;
            m.extend(fw.hist.iter().zip(&blend).map(|(a, b)| a * b));
            (PrimitiveSet::concat(&[&curr, h])?, Some(m))
        }
    };
    summary.fusion_weight_seconds = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let mut fine = deposit_weighted(&fused, multipliers.as_deref(), ctx.grid)?;
    if let Some(newest) = history.last().and_then(|sk| state.keyframes.iter().find(|k| k.created == sk.created)) {
        let touched = hist.as_ref().map(|h| stencil_voxels(h, ctx.grid)).unwrap_or_default();
        summary.static_voxels = fine.retain_even_channels(&newest.fine, |i| touched.binary_search(&i).is_err())?;
    }
    let deposit_secs = clock.elapsed().as_secs_f64();
    let keep_grid = state.schedule.is_keyframe(t).then(|| fine.clone());

    let mut out = refine_grid(fine, ctx.grid, ctx.run, ctx.voxel_store, &ctx.options)?;
    out.summary.splats_in = fused.len();
    out.summary.timings.multiview = multiview_secs;
    out.summary.timings.deposit = deposit_secs;

    let clock = Instant::now();
    let image = render(&out.prims, ctx.target, ctx.run.background).rgb;
    out.summary.timings.render = clock.elapsed().as_secs_f64();
    if !image.data.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric(format!("frame {t}: non-finite render")));
    }

    if let Some(grid) = keep_grid {
        state
            .keyframes
            .push(Keyframe::new(t, out.prims.clone(), grid, ctx.cams, ctx.run));
    }
    let alive: Vec<usize> = state.schedule.active(t).iter().map(|k| k.created).collect();
    state.keyframes.retain(|k| alive.contains(&k.created));
    state.frame = t + 1;
    summary.keyframes = state.keyframes.len();
    summary.fuse = out.summary;
    Ok(StepOutput {
        prims: out.prims,
        render: image,
        summary,
    })
}
