//! Error-aware fusion multipliers and the static-voxel mask.

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::primitives::PrimitiveSet;
use crate::raster::{project_sorted, render, ProjectedSplat};
use crate::voxel::{splat_stencil, VoxelGridConfig};

/// Per-splat multipliers in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub hist: Vec<f64>,
    pub curr: Vec<f64>,
}

/// Summed-area table over a per-pixel scalar map.
struct Integral {
    w: usize,
    s: Vec<f64>,
}

impl Integral {
    fn new(vals: &[f64], w: usize, h: usize) -> Self {
        let mut s = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += vals[y * w + x];
                s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
            }
        }
        Integral { w, s }
    }

    /// Sum over the inclusive box `[x0, x1] x [y0, y1]`.
    fn sum(&self, [x0, x1, y0, y1]: [u32; 4]) -> f64 {
        let (x0, x1, y0, y1) = (x0 as usize, x1 as usize + 1, y0 as usize, y1 as usize + 1);
        let at = |x: usize, y: usize| self.s[y * (self.w + 1) + x];
        at(x1, y1) - at(x0, y1) - at(x1, y0) + at(x0, y0)
    }
}

fn sq_error(img: &ImageBuffer, gt: &ImageBuffer) -> Vec<f64> {
    img.data
        .chunks_exact(3)
        .zip(gt.data.chunks_exact(3))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum())
        .collect()
}

/// Adds a vote for every splat of `group` whose footprint error rises by adding it and
/// that renders in front of `other_depth`.
fn vote(group: &[ProjectedSplat], increase: &Integral, other_depth: &ImageBuffer, cam: &Camera, votes: &mut [usize]) {
    for s in group {
        let (u, v) = (s.mean.x, s.mean.y);
        if !cam.contains_pixel(u, v) {
            continue;
        }
        let in_front = s.depth < other_depth.pixel(u as u32, v as u32)[0] as f64;
        if in_front && increase.sum(s.bbox) > 0.0 {
            votes[s.index] += 1;
        }
    }
}

/// Zeroes the multiplier of a splat (historical or current) when adding its group raises
/// the squared error over its 3-sigma footprint in strictly more than half of the views
/// while it renders in front of the other group's depth.
pub fn error_aware_weights(
    hist: &PrimitiveSet,
    curr: &PrimitiveSet,
    frames: &[ImageBuffer],
    cams: &[Camera],
    background: [f64; 3],
) -> Result<FusionWeights> {
    if frames.len() != cams.len() {
        return Err(Error::Shape(format!("{} frames for {} cameras", frames.len(), cams.len())));
    }
    let h = hist.without_features();
    let c = curr.without_features();
    let both = PrimitiveSet::concat(&[&h, &c])?;
    let mut hv = vec![0usize; h.len()];
    let mut cv = vec![0usize; c.len()];
    for (gt, cam) in frames.iter().zip(cams) {
        let all = render(&both, cam, background);
        let only_c = render(&c, cam, background);
        let only_h = render(&h, cam, background);
        let e_all = sq_error(&all.rgb, gt);
        let e_c = sq_error(&only_c.rgb, gt);
        let e_h = sq_error(&only_h.rgb, gt);
        let (w, ht) = (cam.width as usize, cam.height as usize);
        let inc_h: Vec<f64> = e_all.iter().zip(&e_c).map(|(a, b)| a - b).collect();
        let inc_c: Vec<f64> = e_all.iter().zip(&e_h).map(|(a, b)| a - b).collect();
        vote(&project_sorted(&h, cam), &Integral::new(&inc_h, w, ht), &only_c.depth, cam, &mut hv);
        vote(&project_sorted(&c, cam), &Integral::new(&inc_c, w, ht), &only_h.depth, cam, &mut cv);
    }
    let n = cams.len();
    let to_mult = |v: Vec<usize>| v.into_iter().map(|k| if 2 * k > n { 0.0 } else { 1.0 }).collect();
    Ok(FusionWeights {
        hist: to_mult(hv),
        curr: to_mult(cv),
    })
}

/// Sorted fine voxels touched by the deposit stencil of any splat in `prims`.
pub fn stencil_voxels(prims: &PrimitiveSet, cfg: &VoxelGridConfig) -> Vec<usize> {
    let mut v: Vec<usize> = prims
        .positions
        .iter()
        .filter_map(|p| splat_stencil(cfg, p))
        .flat_map(|st| st.iter().map(|(i, _)| i).collect::<Vec<_>>())
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// `alpha -> factor * alpha` for every splat.
pub fn scale_opacity(prims: &PrimitiveSet, factor: &[f64]) -> PrimitiveSet {
    let mut out = prims.clone();
    for (o, f) in out.opacities.iter_mut().zip(factor) {
        let a = crate::primitives::sigmoid(*o) * f;
        *o = crate::primitives::logit(a);
    }
    out
}
