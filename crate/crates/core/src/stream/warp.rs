//! Warping a keyframe's splats to the current frame through tracked, triangulated anchors.

use nalgebra::Vector3;

use super::fps::fps_sample;
use super::graph::{build_deform_graph, lbs_warp, select_motion_anchors, DeformationGraph};
use super::tracker::{TrackQuery, Tracker};
use super::triangulate::triangulate;
use crate::camera::Camera;
use crate::error::Result;
use crate::image::ImageBuffer;
use crate::io::RunConfig;
use crate::primitives::PrimitiveSet;
use crate::raster::{depth_visibility, render_depth};
use crate::voxel::FineGrid;

/// A refined frame kept for fusion into later frames.
#[derive(Debug, Clone)]
pub struct Keyframe {
    pub created: usize,
    /// Refined splats with features.
    pub prims: PrimitiveSet,
    /// Fine grid of the keyframe after static retention, before block culling.
    pub fine: FineGrid,
    /// Depth of `prims` in every input view.
    pub depths: Vec<ImageBuffer>,
    /// Absolute depth-visibility slack.
    pub slack: f64,
    /// Anchor topology, built once motion is first detected.
    pub graph: Option<DeformationGraph>,
}

impl Keyframe {
    pub fn new(created: usize, prims: PrimitiveSet, fine: FineGrid, cams: &[Camera], cfg: &RunConfig) -> Self {
        let depths = cams.iter().map(|c| render_depth(&prims, c)).collect();
        let slack = cfg.occlusion_slack * prims.extent();
        Keyframe {
            created,
            prims,
            fine,
            depths,
            slack,
            graph: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpParams {
    pub anchor_count: usize,
    pub knn_k: usize,
    pub lambda: f64,
    pub flow_threshold: f64,
}

impl WarpParams {
    pub fn from_config(cfg: &RunConfig) -> Self {
        WarpParams {
            anchor_count: cfg.anchor_count,
            knn_k: cfg.knn_k,
            lambda: cfg.graph_lambda,
            flow_threshold: cfg.flow_threshold,
        }
    }
}

/// Per-pixel displacement (two channels) of every view from frame `from` to `to`, as
/// reported by `tracker` for the surface seen in `depths`. Occluded pixels get zero flow.
pub fn tracking_flow(tracker: &dyn Tracker, depths: &[ImageBuffer], cams: &[Camera], from: usize, to: usize) -> Result<Vec<ImageBuffer>> {
    cams.iter()
        .zip(depths)
        .enumerate()
        .map(|(v, (cam, depth))| {
            let (w, h) = (cam.width, cam.height);
            let queries: Vec<TrackQuery> = (0..h)
                .flat_map(|y| (0..w).map(move |x| (x, y)))
                .map(|(x, y)| {
                    let (u, vv) = (x as f64 + 0.5, y as f64 + 0.5);
                    let z = depth.pixel(x, y)[0] as f64;
                    TrackQuery {
                        view: v,
                        pixel: (u, vv),
                        point: z.is_finite().then(|| cam.unproject(u, vv, z)),
                    }
                })
                .collect();
            let res = tracker.track(&queries, from, to, cams)?;
            let mut flow = ImageBuffer::new(w, h, 2);
            for (q, r) in queries.iter().zip(&res) {
                if !r.occluded {
                    let px = flow.pixel_mut(q.pixel.0 as u32, q.pixel.1 as u32);
                    px[0] = (r.pixel.0 - q.pixel.0) as f32;
                    px[1] = (r.pixel.1 - q.pixel.1) as f32;
                }
            }
            Ok(flow)
        })
        .collect()
}

/// Anchors chosen by farthest point sampling over the moving splats, with zero
/// translations; `None` when nothing moves.
pub fn graph_topology(kf: &Keyframe, flows: &[ImageBuffer], cams: &[Camera], params: &WarpParams) -> Result<Option<DeformationGraph>> {
    let pos = &kf.prims.positions;
    let moving = select_motion_anchors(pos, flows, cams, &kf.depths, params.flow_threshold, kf.slack);
    if moving.is_empty() || params.anchor_count == 0 {
        return Ok(None);
    }
    let pts: Vec<Vector3<f64>> = moving.iter().map(|&i| pos[i]).collect();
    let picked = fps_sample(&pts, params.anchor_count.min(pts.len()), 0)?;
    let anchors: Vec<usize> = picked.iter().map(|&i| moving[i]).collect();
    let k = params.knn_k.clamp(1, anchors.len());
    let zero = vec![Vector3::zeros(); anchors.len()];
    build_deform_graph(pos, &anchors, zero, k, params.lambda).map(Some)
}

/// Triangulated anchor motion from `from` to `to`; anchors that cannot be triangulated
/// keep a zero translation. Returns the translations and the number triangulated.
pub fn anchor_translations(kf: &Keyframe, anchors: &[usize], tracker: &dyn Tracker, cams: &[Camera], to: usize) -> Result<(Vec<Vector3<f64>>, usize)> {
    let mut queries = Vec::new();
    let mut owner = Vec::new();
    for (a, &s) in anchors.iter().enumerate() {
        let p = kf.prims.positions[s];
        for (v, cam) in cams.iter().enumerate() {
            let Some((u, w, _)) = cam.project(&p) else { continue };
            if cam.contains_pixel(u, w) && depth_visibility(&p, &kf.depths[v], cam, kf.slack) {
                queries.push(TrackQuery {
                    view: v,
                    pixel: (u, w),
                    point: Some(p),
                });
                owner.push(a);
            }
        }
    }
    let res = tracker.track(&queries, kf.created, to, cams)?;
    let mut rays: Vec<Vec<(Vector3<f64>, Vector3<f64>)>> = vec![Vec::new(); anchors.len()];
    for ((q, r), &a) in queries.iter().zip(&res).zip(&owner) {
        if !r.occluded {
            rays[a].push(cams[q.view].ray_through(r.pixel.0, r.pixel.1));
        }
    }
    let mut ok = 0;
    let t = anchors
        .iter()
        .zip(&rays)
        .map(|(&s, r)| {
            let o: Vec<_> = r.iter().map(|x| x.0).collect();
            let d: Vec<_> = r.iter().map(|x| x.1).collect();
            match triangulate(&o, &d, &vec![true; r.len()]) {
                Ok(x) => {
                    ok += 1;
                    x - kf.prims.positions[s]
                }
                Err(_) => Vector3::zeros(),
            }
        })
        .collect();
    Ok((t, ok))
}

#[derive(Debug, Clone)]
pub struct WarpResult {
    pub warped: PrimitiveSet,
    /// Splats that actually moved, ascending.
    pub deformed: Vec<usize>,
    pub anchors: usize,
    pub triangulated: usize,
}

/// Warps `kf` to frame `to`, building (and caching) its graph on first motion.
pub fn warp_keyframe(kf: &mut Keyframe, tracker: &dyn Tracker, cams: &[Camera], to: usize, params: &WarpParams) -> Result<WarpResult> {
    if kf.graph.is_none() {
        let flows = tracking_flow(tracker, &kf.depths, cams, kf.created, to)?;
        kf.graph = graph_topology(kf, &flows, cams, params)?;
    }
    let Some(anchors) = kf.graph.as_ref().map(|g| g.anchors.clone()) else {
        return Ok(WarpResult {
            warped: kf.prims.clone(),
            deformed: Vec::new(),
            anchors: 0,
            triangulated: 0,
        });
    };
    let (t, ok) = anchor_translations(kf, &anchors, tracker, cams, to)?;
    let graph = kf.graph.as_mut().expect("checked above");
    graph.translations = t;
    let warped = lbs_warp(graph, &kf.prims)?;
    let deformed = (0..warped.len())
        .filter(|&s| warped.positions[s] != kf.prims.positions[s])
        .collect();
    Ok(WarpResult {
        warped,
        deformed,
        anchors: anchors.len(),
        triangulated: ok,
    })
}
