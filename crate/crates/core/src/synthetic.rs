//! Seeded synthetic scenes: splats, a camera rig, analytic motion and ground-truth renders.

use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{save_camera_set, Camera};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::io::save_primitives;
use crate::primitives::{PrimitiveSet, Splat};
use crate::raster::render;
use crate::stream::{Motion, MotionFile};

/// Distance from the rig to the scene center.
pub const RIG_DISTANCE: f64 = 3.5;
pub const RIG_NEAR: f64 = 1.5;
pub const RIG_FAR: f64 = 6.0;
/// Half-extent of the region the splats are drawn from.
pub const SCENE_RADIUS: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// Random anisotropic Gaussians in a ball.
    Blobs,
    /// A two-colour checkerboard of flat splats facing the rig.
    Checker,
    /// Splats on a tilted ring around the center.
    Orbit,
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(SceneKind::Blobs),
            "checker" => Ok(SceneKind::Checker),
            "orbit" => Ok(SceneKind::Orbit),
            other => Err(Error::Invalid(format!("unknown scene kind '{other}' (blobs|checker|orbit)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    None,
    Translate,
    Swirl,
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MotionKind::None),
            "translate" => Ok(MotionKind::Translate),
            "swirl" => Ok(MotionKind::Swirl),
            other => Err(Error::Invalid(format!("unknown motion '{other}' (none|translate|swirl)"))),
        }
    }
}

impl MotionKind {
    /// The analytic field used for this kind.
    pub fn motion(self) -> Motion {
        match self {
            MotionKind::None => Motion::None,
            MotionKind::Translate => Motion::Translate {
                velocity: [0.02, -0.01, 0.0],
            },
            MotionKind::Swirl => Motion::Swirl {
                center: [0.0; 3],
                axis: [0.0, 1.0, 0.0],
                angular_velocity: 0.08,
                radius: 0.6,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub scene: SceneKind,
    pub n_splats: usize,
    pub n_views: usize,
    pub n_frames: usize,
    pub motion: MotionKind,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            scene: SceneKind::Blobs,
            n_splats: 100,
            n_views: 4,
            n_frames: 1,
            motion: MotionKind::None,
            seed: 0,
            width: 64,
            height: 64,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_splats == 0 || self.n_views == 0 || self.n_frames == 0 {
            return Err(Error::Invalid("n-splats, n-views and n-frames must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("image size must be positive".into()));
        }
        if self.motion != MotionKind::None && self.n_frames < 2 {
            return Err(Error::Invalid(format!(
                "motion '{:?}' needs at least 2 frames, got {}",
                self.motion, self.n_frames
            )));
        }
        Ok(())
    }
}

/// A generated scene: frame-0 splats, input views, the held-out target view and motion.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub prims: PrimitiveSet,
    pub cams: Vec<Camera>,
    pub target: Camera,
    pub motion: MotionFile,
    pub background: [f64; 3],
}

fn random_unit_quaternion(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-3 && n <= 1.0 {
            return q.map(|v| v / n);
        }
    }
}

fn in_ball(rng: &mut ChaCha8Rng, r: f64) -> Vector3<f64> {
    loop {
        let p = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if p.norm_squared() <= 1.0 {
            return p * r;
        }
    }
}

fn rgb_splat(position: Vector3<f64>, alpha: f64, rotation: [f64; 4], scale: Vector3<f64>, rgb: [f64; 3]) -> Splat {
    let mut s = Splat::isotropic(position, alpha, 1.0, rgb);
    s.rotation = rotation;
    s.log_scale = scale.map(f64::ln);
    s
}

fn blobs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Splat> {
    (0..n)
        .map(|_| {
            let p = in_ball(rng, SCENE_RADIUS);
            let scale = Vector3::from_fn(|_, _| rng.gen_range(0.03..0.09));
            let rgb = std::array::from_fn(|_| rng.gen_range(0.1..0.95));
            let q = random_unit_quaternion(rng);
            rgb_splat(p, rng.gen_range(0.5..0.95), q, scale, rgb)
        })
        .collect()
}

fn checker(rng: &mut ChaCha8Rng, n: usize) -> Vec<Splat> {
    let side = (n as f64).sqrt().ceil() as usize;
    let step = 2.0 * SCENE_RADIUS / side as f64;
    let [a, b]: [[f64; 3]; 2] = [
        std::array::from_fn(|_| rng.gen_range(0.6..0.95)),
        std::array::from_fn(|_| rng.gen_range(0.05..0.35)),
    ];
    (0..n)
        .map(|i| {
            let (r, c) = (i / side, i % side);
            let p = Vector3::new(
                -SCENE_RADIUS + (c as f64 + 0.5) * step,
                -SCENE_RADIUS + (r as f64 + 0.5) * step,
                0.0,
            );
            let rgb = if (r + c) % 2 == 0 { a } else { b };
            let scale = Vector3::new(0.6 * step, 0.6 * step, 0.01);
            rgb_splat(p, 0.9, [1.0, 0.0, 0.0, 0.0], scale, rgb)
        })
        .collect()
}

fn orbit(rng: &mut ChaCha8Rng, n: usize) -> Vec<Splat> {
    let tilt = 0.4f64;
    (0..n)
        .map(|i| {
            let th = std::f64::consts::TAU * i as f64 / n as f64;
            let r = SCENE_RADIUS * rng.gen_range(0.75..1.0);
            let (x, y0, z0) = (r * th.cos(), rng.gen_range(-0.05..0.05), r * th.sin());
            let p = Vector3::new(x, y0 * tilt.cos() - z0 * tilt.sin(), y0 * tilt.sin() + z0 * tilt.cos());
            let hue = th / std::f64::consts::TAU;
            let rgb = [
                0.5 + 0.4 * (std::f64::consts::TAU * hue).cos(),
                0.5 + 0.4 * (std::f64::consts::TAU * (hue + 1.0 / 3.0)).cos(),
                0.5 + 0.4 * (std::f64::consts::TAU * (hue + 2.0 / 3.0)).cos(),
            ];
            let s = rng.gen_range(0.04..0.07);
            rgb_splat(p, 0.85, [1.0, 0.0, 0.0, 0.0], Vector3::repeat(s), rgb)
        })
        .collect()
}

/// Views on a horizontal arc facing the scene center; the target sits between the two
/// middle views, raised slightly, so it is never one of the inputs.
pub fn rig(n_views: usize, width: u32, height: u32) -> (Vec<Camera>, Camera) {
    let f = 0.9 * width.max(height) as f64;
    let up = Vector3::new(0.0, 1.0, 0.0);
    let at = |yaw: f64, lift: f64| {
        let eye = Vector3::new(RIG_DISTANCE * yaw.sin(), lift, -RIG_DISTANCE * yaw.cos());
        Camera::look_at(eye, Vector3::zeros(), up, f, f, width, height, RIG_NEAR, RIG_FAR)
    };
    let spread = 0.5f64;
    let cams = (0..n_views)
        .map(|i| {
            let u = if n_views == 1 { 0.5 } else { i as f64 / (n_views - 1) as f64 };
            at(spread * (2.0 * u - 1.0), 0.0)
        })
        .collect();
    let offset = if n_views % 2 == 0 { 0.0 } else { spread / n_views as f64 };
    (cams, at(offset, 0.25))
}

impl SyntheticScene {
    pub fn generate(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let splats = match spec.scene {
            SceneKind::Blobs => blobs(&mut rng, spec.n_splats),
            SceneKind::Checker => checker(&mut rng, spec.n_splats),
            SceneKind::Orbit => orbit(&mut rng, spec.n_splats),
        };
        let prims = PrimitiveSet::from_splats(0, &splats)?;
        let (cams, target) = rig(spec.n_views, spec.width, spec.height);
        Ok(SyntheticScene {
            prims,
            cams,
            target,
            motion: MotionFile {
                frames: spec.n_frames,
                motion: spec.motion.motion(),
            },
            background: [0.0; 3],
        })
    }

    /// Splats at frame `t`; orientations are kept.
    pub fn frame(&self, t: usize) -> PrimitiveSet {
        let mut p = self.prims.clone();
        for x in &mut p.positions {
            *x = self.motion.motion.position(x, t as f64);
        }
        p
    }

    pub fn view_images(&self, t: usize) -> Vec<ImageBuffer> {
        let p = self.frame(t);
        self.cams.iter().map(|c| render(&p, c, self.background).rgb).collect()
    }

    pub fn target_image(&self, t: usize) -> ImageBuffer {
        render(&self.frame(t), &self.target, self.background).rgb
    }

    /// Writes `scene.ply`, `cameras.json`, `target_camera.json`, `motion.json` and per
    /// frame `frames/view_{i}/frame_{t:04}.png`, `frames/target/frame_{t:04}.png` and
    /// `frames/prims/frame_{t:04}.ply`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        let frames = dir.join("frames");
        for v in 0..self.cams.len() {
            mkdir(&frames.join(format!("view_{v}")))?;
        }
        mkdir(&frames.join("target"))?;
        mkdir(&frames.join("prims"))?;
        save_primitives(dir.join("scene.ply"), &self.prims, None)?;
        save_camera_set(dir.join("cameras.json"), &self.cams)?;
        save_camera_set(dir.join("target_camera.json"), std::slice::from_ref(&self.target))?;
        self.motion.save(dir.join("motion.json"))?;
        for t in 0..self.motion.frames {
            let name = format!("frame_{t:04}");
            for (v, img) in self.view_images(t).iter().enumerate() {
                img.save_png(frames.join(format!("view_{v}")).join(format!("{name}.png")))?;
            }
            self.target_image(t).save_png(frames.join("target").join(format!("{name}.png")))?;
            save_primitives(frames.join("prims").join(format!("{name}.ply")), &self.frame(t), None)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_seed_deterministic() {
        for scene in [SceneKind::Blobs, SceneKind::Checker, SceneKind::Orbit] {
            let spec = SyntheticSpec {
                scene,
                seed: 7,
                ..SyntheticSpec::default()
            };
            let a = SyntheticScene::generate(&spec).unwrap();
            let b = SyntheticScene::generate(&spec).unwrap();
            assert_eq!(a.prims, b.prims);
            assert_eq!(a.prims.len(), 100);
        }
    }

    #[test]
    fn every_splat_is_seen_by_every_view() {
        let s = SyntheticScene::generate(&SyntheticSpec::default()).unwrap();
        for cam in s.cams.iter().chain([&s.target]) {
            for p in &s.prims.positions {
                let (u, v, z) = cam.project(p).unwrap();
                assert!(cam.contains_pixel(u, v));
                assert!(z > RIG_NEAR && z < RIG_FAR);
            }
        }
    }

    #[test]
    fn motion_needs_two_frames() {
        let spec = SyntheticSpec {
            motion: MotionKind::Translate,
            n_frames: 1,
            ..SyntheticSpec::default()
        };
        assert!(matches!(SyntheticScene::generate(&spec), Err(Error::Invalid(_))));
        assert!("cube".parse::<SceneKind>().is_err());
    }

    #[test]
    fn static_frames_repeat() {
        let spec = SyntheticSpec {
            n_frames: 3,
            ..SyntheticSpec::default()
        };
        let s = SyntheticScene::generate(&spec).unwrap();
        assert_eq!(s.frame(2), s.prims);
        assert_eq!(s.view_images(0), s.view_images(2));
    }

    #[test]
    fn translation_moves_every_splat_equally() {
        let spec = SyntheticSpec {
            n_frames: 4,
            motion: MotionKind::Translate,
            ..SyntheticSpec::default()
        };
        let s = SyntheticScene::generate(&spec).unwrap();
        let f3 = s.frame(3);
        for (a, b) in s.prims.positions.iter().zip(&f3.positions) {
            assert!(((b - a) - Vector3::new(0.06, -0.03, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn written_layout() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            n_views: 2,
            n_frames: 2,
            width: 32,
            height: 32,
            motion: MotionKind::Swirl,
            ..SyntheticSpec::default()
        };
        SyntheticScene::generate(&spec).unwrap().write(dir.path()).unwrap();
        for f in [
            "scene.ply",
            "cameras.json",
            "target_camera.json",
            "motion.json",
            "frames/view_1/frame_0001.png",
            "frames/target/frame_0000.png",
            "frames/prims/frame_0001.ply",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let m = MotionFile::load(dir.path().join("motion.json")).unwrap();
        assert_eq!(m.frames, 2);
    }
}
