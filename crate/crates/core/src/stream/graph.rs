//! Motion anchors, embedded deformation graph and translation-only LBS warp.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::primitives::PrimitiveSet;
use crate::raster::depth_visibility;

/// Splats that move in strictly more than half of the views.
///
/// A view counts when the splat projects inside it, passes the depth-visibility test, and
/// the flow (two channels) at its pixel exceeds `threshold` pixels.
pub fn select_motion_anchors(
    positions: &[Vector3<f64>],
    flows: &[ImageBuffer],
    cams: &[Camera],
    depths: &[ImageBuffer],
    threshold: f64,
    slack: f64,
) -> Vec<usize> {
    let n_views = cams.len();
    (0..positions.len())
        .filter(|&k| {
            let p = &positions[k];
            let moving = (0..n_views)
                .filter(|&v| {
                    let Some((u, w, _)) = cams[v].project(p) else {
                        return false;
                    };
                    if !cams[v].contains_pixel(u, w) || !depth_visibility(p, &depths[v], &cams[v], slack) {
                        return false;
                    }
                    let f = flows[v].pixel(u as u32, w as u32);
                    (f[0] as f64).hypot(f[1] as f64) > threshold
                })
                .count();
            2 * moving > n_views
        })
        .collect()
}

/// Per-splat blend of its `k` nearest anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationGraph {
    /// Anchor indices into the keyframe set.
    pub anchors: Vec<usize>,
    /// `t_i`, aligned with `anchors`.
    pub translations: Vec<Vector3<f64>>,
    pub k: usize,
    /// Anchor slots, `k` per splat.
    pub neighbors: Vec<usize>,
    /// Blend weights, `k` per splat.
    pub weights: Vec<f64>,
    /// Splats farther than the cutoff from every anchor.
    pub is_static: Vec<bool>,
    pub sigma: f64,
    /// `lambda * mean inter-anchor distance`.
    pub cutoff: f64,
}

fn mean_pairwise_distance(points: &[Vector3<f64>]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += (points[i] - points[j]).norm();
        }
    }
    s / (n * (n - 1) / 2) as f64
}

/// Builds the graph over `positions` with anchor translations `translations`.
pub fn build_deform_graph(
    positions: &[Vector3<f64>],
    anchors: &[usize],
    translations: Vec<Vector3<f64>>,
    k: usize,
    lambda: f64,
) -> Result<DeformationGraph> {
    if anchors.is_empty() {
        return Err(Error::Invalid("deformation graph needs at least one anchor".into()));
    }
    if translations.len() != anchors.len() {
        return Err(Error::Shape(format!(
            "{} translations for {} anchors",
            translations.len(),
            anchors.len()
        )));
    }
    if k == 0 || k > anchors.len() {
        return Err(Error::Invalid(format!("k = {k} with {} anchors", anchors.len())));
    }
    let apos: Vec<Vector3<f64>> = anchors.iter().map(|&a| positions[a]).collect();
    // Nearest anchors (ties to the lower slot) and their distances.
    let knn: Vec<(Vec<usize>, Vec<f64>)> = positions
        .par_iter()
        .map(|p| {
            let mut d: Vec<(f64, usize)> = apos.iter().enumerate().map(|(i, a)| ((p - a).norm(), i)).collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < d.len() {
                d.select_nth_unstable_by(k - 1, cmp);
                d.truncate(k);
            }
            d.sort_by(cmp);
            (d.iter().map(|e| e.1).collect(), d.iter().map(|e| e.0).collect())
        })
        .collect();
    let total: f64 = knn.iter().flat_map(|(_, d)| d.iter()).sum();
    let sigma = total / (positions.len() * k).max(1) as f64;
    let cutoff = lambda * mean_pairwise_distance(&apos);

    let mut neighbors = Vec::with_capacity(positions.len() * k);
    let mut weights = Vec::with_capacity(positions.len() * k);
    let mut is_static = Vec::with_capacity(positions.len());
    for (nb, d) in &knn {
        // Shifting by the nearest distance keeps the normalization finite for tiny sigma.
        let d0 = d[0] * d[0];
        let w: Vec<f64> = d
            .iter()
            .map(|di| if sigma > 0.0 { (-(di * di - d0) / (sigma * sigma)).exp() } else { 1.0 })
            .collect();
        let s: f64 = w.iter().sum();
        neighbors.extend_from_slice(nb);
        weights.extend(w.iter().map(|x| x / s));
        is_static.push(d[0] > cutoff);
    }
    Ok(DeformationGraph {
        anchors: anchors.to_vec(),
        translations,
        k,
        neighbors,
        weights,
        is_static,
        sigma,
        cutoff,
    })
}

impl DeformationGraph {
    pub fn len(&self) -> usize {
        self.is_static.len()
    }

    pub fn is_empty(&self) -> bool {
        self.is_static.is_empty()
    }

    /// `delta p = sum_i w_i t_i` for splat `s`, or `None` when it is static.
    pub fn displacement(&self, s: usize) -> Option<Vector3<f64>> {
        if self.is_static[s] {
            return None;
        }
        let r = s * self.k..(s + 1) * self.k;
        Some(
            self.neighbors[r.clone()]
                .iter()
                .zip(&self.weights[r])
                .fold(Vector3::zeros(), |acc, (&a, &w)| acc + self.translations[a] * w),
        )
    }
}

/// Translates every non-static splat by its blended displacement; all other attributes
/// are copied verbatim.
pub fn lbs_warp(graph: &DeformationGraph, prims: &PrimitiveSet) -> Result<PrimitiveSet> {
    if graph.len() != prims.len() {
        return Err(Error::Shape(format!(
            "graph over {} splats applied to {}",
            graph.len(),
            prims.len()
        )));
    }
    let mut out = prims.clone();
    for (s, p) in out.positions.iter_mut().enumerate() {
        if let Some(d) = graph.displacement(s) {
            *p += d;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::Splat;
    use nalgebra::Matrix4;
    use proptest::prelude::*;

    fn set(points: &[Vector3<f64>]) -> PrimitiveSet {
        let s: Vec<Splat> = points.iter().map(|p| Splat::isotropic(*p, 0.5, 0.05, [0.5; 3])).collect();
        PrimitiveSet::from_splats(0, &s).unwrap()
    }

    #[test]
    fn equidistant_splat_gets_uniform_weights() {
        let pts = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
            Vector3::zeros(),
        ];
        let g = build_deform_graph(&pts, &[0, 1, 2, 3], vec![Vector3::zeros(); 4], 4, 0.35).unwrap();
        for w in &g.weights[16..20] {
            assert!((w - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn single_anchor_moves_its_splat() {
        let pts = vec![Vector3::new(0.3, 0.2, 0.1)];
        let g = build_deform_graph(&pts, &[0], vec![Vector3::new(1.0, 0.0, 0.0)], 1, 0.35).unwrap();
        assert_eq!(g.weights, vec![1.0]);
        let out = lbs_warp(&g, &set(&pts)).unwrap();
        assert_eq!(out.positions[0], Vector3::new(1.3, 0.2, 0.1));
    }

    #[test]
    fn opposite_translations_cancel_at_the_midpoint() {
        let pts = vec![Vector3::new(-1.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()];
        let t = vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0)];
        let g = build_deform_graph(&pts, &[0, 1], t, 2, 1.0).unwrap();
        assert_eq!(&g.weights[4..6], &[0.5, 0.5]);
        assert_eq!(g.displacement(2).unwrap(), Vector3::zeros());
    }

    #[test]
    fn far_splats_are_static_and_untouched() {
        let pts = vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::new(50.0, 0.0, 0.0)];
        let t = vec![Vector3::new(0.1, 0.2, 0.3); 2];
        let g = build_deform_graph(&pts, &[0, 1], t, 2, 0.35).unwrap();
        assert!(g.is_static[2] && !g.is_static[0]);
        let prims = set(&pts);
        let out = lbs_warp(&g, &prims).unwrap();
        assert_eq!(out.positions[2], prims.positions[2]);
        assert_eq!(out.splat(2), prims.splat(2));
    }

    #[test]
    fn zero_field_is_identity() {
        let pts: Vec<_> = (0..20).map(|i| Vector3::new(i as f64 * 0.1, (i % 3) as f64, 0.0)).collect();
        let g = build_deform_graph(&pts, &[0, 5, 10, 15], vec![Vector3::zeros(); 4], 4, 0.35).unwrap();
        assert_eq!(lbs_warp(&g, &set(&pts)).unwrap(), set(&pts));
        assert!(build_deform_graph(&pts, &[], vec![], 4, 0.35).is_err());
    }

    #[test]
    fn strict_majority_of_moving_views() {
        let cam = Camera {
            fx: 20.0,
            fy: 20.0,
            cx: 8.0,
            cy: 8.0,
            width: 16,
            height: 16,
            world_to_camera: Matrix4::identity(),
            near: 0.1,
            far: 100.0,
        };
        let p = vec![Vector3::new(0.0, 0.0, 2.0)];
        let depth = ImageBuffer::filled(16, 16, 1, f32::INFINITY);
        let moving = ImageBuffer::filled(16, 16, 2, 1.0);
        let still = ImageBuffer::new(16, 16, 2);
        let cams = vec![cam.clone(), cam];
        let depths = vec![depth.clone(), depth];
        let sel = |f: Vec<ImageBuffer>| select_motion_anchors(&p, &f, &cams, &depths, 0.2, 0.0);
        assert_eq!(sel(vec![moving.clone(), moving.clone()]), vec![0]);
        assert!(sel(vec![moving.clone(), still.clone()]).is_empty());
        assert!(sel(vec![still.clone(), still]).is_empty());
    }

    proptest! {
        #[test]
        fn weights_form_a_partition_of_unity(
            raw in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0), 8..60),
            k in 1usize..5,
        ) {
            let pts: Vec<_> = raw.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect();
            let anchors: Vec<usize> = (0..pts.len()).step_by(2).collect();
            let k = k.min(anchors.len());
            let g = build_deform_graph(&pts, &anchors, vec![Vector3::zeros(); anchors.len()], k, 0.35).unwrap();
            for s in 0..pts.len() {
                let w = &g.weights[s * k..(s + 1) * k];
                prop_assert!(w.iter().all(|&x| x >= 0.0));
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}
