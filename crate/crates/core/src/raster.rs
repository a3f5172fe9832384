//! CPU reference splatting renderer: front-to-back compositing, depth and visibility.

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::camera::Camera;
use crate::gaussian::project_gaussian;
use crate::image::ImageBuffer;
use crate::primitives::PrimitiveSet;

/// Contributions with `alpha * G` below this are skipped.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Pixels whose accumulated depth weight is below this get infinite depth.
pub const MIN_DEPTH_WEIGHT: f64 = 1e-4;

const TILE: u32 = 16;

/// A splat prepared for compositing in one camera.
#[derive(Debug, Clone)]
pub struct ProjectedSplat {
    /// Index into the source set.
    pub index: usize,
    pub mean: Vector2<f64>,
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub color: [f64; 3],
    pub alpha: f64,
    /// Inclusive pixel ranges `[x0, x1] x [y0, y1]` whose centers lie in the 3-sigma box.
    pub bbox: [u32; 4],
}

impl ProjectedSplat {
    /// `alpha * G` at the center of pixel `(x, y)`, or 0 outside the footprint.
    #[inline]
    pub fn opacity_at(&self, x: u32, y: u32) -> f64 {
        let [x0, x1, y0, y1] = self.bbox;
        if x < x0 || x > x1 || y < y0 || y > y1 {
            return 0.0;
        }
        let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
        self.alpha * crate::gaussian::Gaussian2D::density_with(&self.conic, &self.mean, &p)
    }
}

/// Projects every visible splat and sorts by depth (stable, so ties keep input order).
pub fn project_sorted(prims: &PrimitiveSet, cam: &Camera) -> Vec<ProjectedSplat> {
    let mut out: Vec<ProjectedSplat> = (0..prims.len())
        .filter_map(|i| {
            let g = project_gaussian(prims, i, cam)?;
            let conic = g.conic()?;
            let (rx, ry) = g.radius();
            let x0 = (g.mean.x - rx - 0.5).ceil().max(0.0);
            let x1 = (g.mean.x + rx - 0.5).floor().min(cam.width as f64 - 1.0);
            let y0 = (g.mean.y - ry - 0.5).ceil().max(0.0);
            let y1 = (g.mean.y + ry - 0.5).floor().min(cam.height as f64 - 1.0);
            if !(x0 <= x1 && y0 <= y1) {
                return None;
            }
            Some(ProjectedSplat {
                index: i,
                mean: g.mean,
                conic,
                depth: g.depth,
                color: g.color,
                alpha: g.alpha,
                bbox: [x0 as u32, x1 as u32, y0 as u32, y1 as u32],
            })
        })
        .collect();
    out.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    out
}

/// Color, accumulated opacity and alpha-blended depth from one compositing pass.
#[derive(Debug, Clone)]
pub struct Render {
    pub rgb: ImageBuffer,
    pub alpha: ImageBuffer,
    pub depth: ImageBuffer,
}

/// Composites `prims` front to back into `cam` over `background`.
pub fn render(prims: &PrimitiveSet, cam: &Camera, background: [f64; 3]) -> Render {
    let splats = project_sorted(prims, cam);
    composite(&splats, cam, background)
}

/// Composites pre-projected, depth-sorted splats.
pub fn composite(splats: &[ProjectedSplat], cam: &Camera, background: [f64; 3]) -> Render {
    let (w, h) = (cam.width, cam.height);
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (k, s) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = s.bbox;
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                bins[(ty * tiles_x + tx) as usize].push(k as u32);
            }
        }
    }

    let mut rgb = ImageBuffer::new(w, h, 3);
    let mut alpha = ImageBuffer::new(w, h, 1);
    let mut depth = ImageBuffer::new(w, h, 1);
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let bin = &bins[(ty * tiles_x + tx) as usize];
            for y in ty * TILE..((ty + 1) * TILE).min(h) {
                for x in tx * TILE..((tx + 1) * TILE).min(w) {
                    let mut t = 1.0;
                    let mut c = [0.0f64; 3];
                    let mut dz = 0.0;
                    let mut dw = 0.0;
                    for &k in bin {
                        let s = &splats[k as usize];
                        let a = s.opacity_at(x, y);
                        if a < MIN_ALPHA {
                            continue;
                        }
                        let wgt = a * t;
                        for ch in 0..3 {
                            c[ch] += s.color[ch] * wgt;
                        }
                        dz += s.depth * wgt;
                        dw += wgt;
                        t *= 1.0 - a;
                        if t < MIN_TRANSMITTANCE {
                            break;
                        }
                    }
                    let px = rgb.pixel_mut(x, y);
                    for ch in 0..3 {
                        px[ch] = (c[ch] + t * background[ch]) as f32;
                    }
                    alpha.pixel_mut(x, y)[0] = (1.0 - t) as f32;
                    depth.pixel_mut(x, y)[0] = if dw < MIN_DEPTH_WEIGHT {
                        f32::INFINITY
                    } else {
                        (dz / dw) as f32
                    };
                }
            }
        }
    }
    Render { rgb, alpha, depth }
}

/// RGB and accumulated-alpha images.
pub fn render_image(prims: &PrimitiveSet, cam: &Camera, background: [f64; 3]) -> (ImageBuffer, ImageBuffer) {
    let r = render(prims, cam, background);
    (r.rgb, r.alpha)
}

/// Alpha-blended camera-space depth; uncovered pixels are `+inf`.
pub fn render_depth(prims: &PrimitiveSet, cam: &Camera) -> ImageBuffer {
    render(prims, cam, [0.0; 3]).depth
}

/// Whether `point` lies in front of (or within `slack` behind) the rendered surface.
pub fn depth_visibility(point: &Vector3<f64>, depth_map: &ImageBuffer, cam: &Camera, slack: f64) -> bool {
    let Some((u, v, z)) = cam.project(point) else {
        return false;
    };
    if !cam.contains_pixel(u, v) || z < cam.near {
        return false;
    }
    let d = depth_map.pixel(u as u32, v as u32)[0] as f64;
    z <= d + slack
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::Splat;
    use nalgebra::{Matrix4, Rotation3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn cam(w: u32, h: u32) -> Camera {
        Camera {
            fx: 100.0,
            fy: 100.0,
            cx: w as f64 / 2.0 + 0.5,
            cy: h as f64 / 2.0 + 0.5,
            width: w,
            height: h,
            world_to_camera: Matrix4::identity(),
            near: 0.1,
            far: f64::INFINITY,
        }
    }

    fn set(splats: &[Splat]) -> PrimitiveSet {
        PrimitiveSet::from_splats(0, splats).unwrap()
    }

    fn opaque(z: f64, rgb: [f64; 3]) -> Splat {
        let mut s = Splat::isotropic(Vector3::new(0.0, 0.0, z), 0.5, 0.05, rgb);
        s.opacity = 40.0;
        s
    }

    #[test]
    fn empty_scene_is_background() {
        let c = cam(8, 8);
        let r = render(&PrimitiveSet::new(0, None), &c, [0.0; 3]);
        assert!(r.rgb.data.iter().all(|&v| v == 0.0));
        assert!(r.alpha.data.iter().all(|&v| v == 0.0));
        assert!(r.depth.data.iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn single_opaque_term() {
        let c = cam(16, 16);
        let r = render(&set(&[opaque(2.0, [0.2, 0.6, 0.9])]), &c, [0.0; 3]);
        let px = r.rgb.pixel(8, 8);
        for (a, b) in px.iter().zip([0.2, 0.6, 0.9]) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
        assert_eq!(r.alpha.pixel(8, 8)[0], 1.0);
        assert!((r.depth.pixel(8, 8)[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn two_term_expansion() {
        let c = cam(16, 16);
        let (c1, c2) = ([1.0, 0.0, 0.2], [0.0, 1.0, 0.6]);
        let front = Splat::isotropic(Vector3::new(0.0, 0.0, 1.0), 0.5, 0.02, c1);
        let back = opaque(3.0, c2);
        let (rgb, _) = render_image(&set(&[back, front]), &c, [0.0; 3]);
        let px = rgb.pixel(8, 8);
        for ch in 0..3 {
            let want = 0.5 * c1[ch] + 0.5 * c2[ch];
            assert!((px[ch] as f64 - want).abs() < 1e-6, "{ch}: {} vs {want}", px[ch]);
        }
    }

    #[test]
    fn front_opaque_splat_hides_back_depth() {
        let c = cam(16, 16);
        let d = render_depth(&set(&[opaque(5.0, [0.5; 3]), opaque(1.0, [0.5; 3])]), &c);
        assert!((d.pixel(8, 8)[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn visibility_rules() {
        let c = cam(16, 16);
        let d = ImageBuffer::filled(16, 16, 1, 3.0);
        assert!(depth_visibility(&Vector3::new(0.0, 0.0, 2.0), &d, &c, 0.1));
        assert!(!depth_visibility(&Vector3::new(0.0, 0.0, 5.0), &d, &c, 0.1));
        assert!(!depth_visibility(&Vector3::new(10.0, 0.0, 2.0), &d, &c, 0.1));
        assert!(!depth_visibility(&Vector3::new(0.0, 0.0, -2.0), &d, &c, 0.1));
    }

    /// Back-to-front "over" compositing over every splat, no tiling or early exit.
    fn over_oracle(prims: &PrimitiveSet, c: &Camera) -> Vec<f64> {
        let splats = project_sorted(prims, c);
        let mut out = Vec::new();
        for y in 0..c.height {
            for x in 0..c.width {
                let mut col = [0.0; 3];
                for s in splats.iter().rev() {
                    let a = s.opacity_at(x, y);
                    if a < MIN_ALPHA {
                        continue;
                    }
                    for ch in 0..3 {
                        col[ch] = s.color[ch] * a + (1.0 - a) * col[ch];
                    }
                }
                out.extend_from_slice(&col);
            }
        }
        out
    }

    fn random_scene(seed: u64, n: usize) -> PrimitiveSet {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let splats: Vec<Splat> = (0..n)
            .map(|_| {
                let mut s = Splat::isotropic(
                    Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(1.5..4.0)),
                    rng.gen_range(0.05..0.5),
                    1.0,
                    [rng.gen(), rng.gen(), rng.gen()],
                );
                s.log_scale = Vector3::new(rng.gen_range(-3.5..-2.0), rng.gen_range(-3.5..-2.0), rng.gen_range(-3.5..-2.0));
                s.rotation = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0];
                s
            })
            .collect();
        set(&splats)
    }

    #[test]
    fn matches_back_to_front_oracle() {
        let c = cam(32, 32);
        for seed in 0..10 {
            let prims = random_scene(seed, 20);
            let (rgb, _) = render_image(&prims, &c, [0.0; 3]);
            let want = over_oracle(&prims, &c);
            for (a, b) in rgb.data.iter().zip(&want) {
                assert!((*a as f64 - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn all_opaque_alpha_bounds() {
        let c = cam(32, 32);
        let mut prims = random_scene(3, 20);
        prims.opacities.iter_mut().for_each(|o| *o = 40.0);
        let (_, alpha) = render_image(&prims, &c, [0.0; 3]);
        let splats = project_sorted(&prims, &c);
        for y in 0..32 {
            for x in 0..32 {
                let a = alpha.pixel(x, y)[0];
                assert!(a <= 1.0);
                if splats.iter().any(|s| s.opacity_at(x, y) >= 1.0 - MIN_ALPHA) {
                    assert!(a as f64 >= 1.0 - MIN_ALPHA);
                }
            }
        }
    }

    #[test]
    fn equal_depth_reorder_is_stable() {
        let c = cam(32, 32);
        let a = Splat::isotropic(Vector3::new(0.1, 0.0, 2.0), 0.4, 0.02, [1.0, 0.0, 0.0]);
        let b = Splat::isotropic(Vector3::new(-0.1, 0.05, 2.0), 0.4, 0.02, [0.0, 0.0, 1.0]);
        let (x, _) = render_image(&set(&[a.clone(), b.clone()]), &c, [0.0; 3]);
        let (y, _) = render_image(&set(&[b, a]), &c, [0.0; 3]);
        for (p, q) in x.data.iter().zip(&y.data) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn rigid_transform_invariance(seed in 0u64..1000, ax in -1.0f64..1.0, ay in -1.0f64..1.0, ang in -1.0f64..1.0,
                                      sx in -2.0f64..2.0, sy in -2.0f64..2.0, sz in -2.0f64..2.0) {
            let c = cam(24, 24);
            let prims = random_scene(seed, 12);
            let rot = Rotation3::new(Vector3::new(ax, ay, 0.3).normalize() * ang).into_inner();
            let shift = Vector3::new(sx, sy, sz);
            let mut moved = prims.clone();
            let q = nalgebra::UnitQuaternion::from_matrix(&rot);
            for i in 0..moved.len() {
                moved.positions[i] = rot * prims.positions[i] + shift;
                let [w, x, y, z] = prims.rotations[i];
                let r = q * nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
                moved.rotations[i] = [r.w, r.i, r.j, r.k];
            }
            let c2 = c.transformed(&rot, &shift);
            let (a, _) = render_image(&prims, &c, [0.0; 3]);
            let (b, _) = render_image(&moved, &c2, [0.0; 3]);
            for (x, y) in a.data.iter().zip(&b.data) {
                prop_assert!((x - y).abs() < 1e-4);
            }
        }
    }
}
