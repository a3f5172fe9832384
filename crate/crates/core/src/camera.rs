//! Pinhole cameras and their JSON interchange format.

use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Drift above which a rotation block is rejected instead of re-orthonormalized.
const MAX_ROTATION_DRIFT: f64 = 1e-4;
/// Drift tolerated without touching the stored matrix.
const ROTATION_TOL: f64 = 1e-6;

/// Pinhole camera with a rigid world-to-camera transform.
///
/// Pixel `(i, j)` covers the continuous range `[i, i+1) x [j, j+1)`; its center sits at
/// `(i + 0.5, j + 0.5)`. A camera-space point `(x, y, z)` projects to
/// `(fx * x / z + cx, fy * y / z + cy)` in those continuous coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub world_to_camera: Matrix4<f64>,
    pub near: f64,
    /// `f64::INFINITY` for unbounded scenes.
    pub far: f64,
}

impl Camera {
    /// Camera at `eye` looking at `target`, with camera +y pointing roughly along `-up`
    /// (image rows grow downwards).
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Camera {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Camera {
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            world_to_camera: m,
            near,
            far,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * world + self.translation()
    }

    pub fn to_world(&self, cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().transpose() * (cam - self.translation())
    }

    /// Continuous pixel coordinates and camera depth of a world point; `None` when the
    /// point is not strictly in front of the camera.
    pub fn project(&self, world: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let p = self.to_camera(world);
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
            p.z,
        ))
    }

    /// World-space ray through continuous pixel coordinates `(u, v)`.
    pub fn ray_through(&self, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
        let d_cam = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        let d = (self.rotation().transpose() * d_cam).normalize();
        (self.center(), d)
    }

    /// Ray through the center of integer pixel `(i, j)`.
    pub fn pixel_ray(&self, i: u32, j: u32) -> (Vector3<f64>, Vector3<f64>) {
        self.ray_through(i as f64 + 0.5, j as f64 + 0.5)
    }

    /// World point at camera depth `z` along the ray through `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        let cam = Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z);
        self.to_world(&cam)
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Same camera with a rigid world transform `x -> rot * x + shift` applied to the scene.
    pub fn transformed(&self, rot: &Matrix3<f64>, shift: &Vector3<f64>) -> Camera {
        // new w2c = old w2c * inverse(scene transform)
        let r = self.rotation() * rot.transpose();
        let t = self.translation() - r * shift;
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Camera {
            world_to_camera: m,
            ..self.clone()
        }
    }

    fn validate(mut self, index: usize) -> Result<Camera> {
        let bad = |what: &str| Error::Format(format!("{what} at camera {index}"));
        if !(self.fx > 0.0) {
            return Err(bad("fx must be > 0"));
        }
        if !(self.fy > 0.0) {
            return Err(bad("fy must be > 0"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(bad("width and height must be > 0"));
        }
        if !(self.near > 0.0) {
            return Err(bad("near must be > 0"));
        }
        if !(self.far > self.near) {
            return Err(bad("far must exceed near"));
        }
        let m = &self.world_to_camera;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite world_to_camera"));
        }
        let last = m.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(bad("non-invertible transform (last row must be 0,0,0,1)"));
        }
        let rot = self.rotation();
        let det = rot.determinant();
        if det.abs() < 1e-9 {
            return Err(bad("non-invertible transform"));
        }
        if det < 0.0 {
            return Err(bad("improper rotation"));
        }
        let drift = (rot.transpose() * rot - Matrix3::identity()).amax();
        if drift > MAX_ROTATION_DRIFT {
            return Err(bad("rotation is not orthonormal"));
        }
        if drift > ROTATION_TOL {
            let svd = rot.svd(true, true);
            let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
            let fixed = u * v_t;
            self.world_to_camera
                .fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&fixed);
        }
        Ok(self)
    }
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    world_to_camera: Vec<f64>,
    near: f64,
    far: Option<f64>,
}

impl CameraRecord {
    fn from_camera(cam: &Camera) -> Self {
        let mut m = Vec::with_capacity(16);
        for r in 0..4 {
            for c in 0..4 {
                m.push(cam.world_to_camera[(r, c)]);
            }
        }
        CameraRecord {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            world_to_camera: m,
            near: cam.near,
            far: cam.far.is_finite().then_some(cam.far),
        }
    }

    fn into_camera(self, index: usize) -> Result<Camera> {
        if self.world_to_camera.len() != 16 {
            return Err(Error::Format(format!(
                "world_to_camera must hold 16 numbers at camera {index}, got {}",
                self.world_to_camera.len()
            )));
        }
        Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            world_to_camera: Matrix4::from_row_slice(&self.world_to_camera),
            near: self.near,
            far: self.far.unwrap_or(f64::INFINITY),
        }
        .validate(index)
    }
}

/// Parses a JSON camera array (see [`save_camera_set`] for the layout).
pub fn parse_camera_set(text: &str) -> Result<Vec<Camera>> {
    let records: Vec<serde_json::Value> = serde_json::from_str(text)
        .map_err(|e| Error::Format(format!("malformed camera JSON: {e}")))?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let rec: CameraRecord = serde_json::from_value(v)
                .map_err(|e| Error::Format(format!("camera {i}: {e}")))?;
            rec.into_camera(i)
        })
        .collect()
}

pub fn load_camera_set(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_camera_set(&text)
}

pub fn camera_set_to_json(cams: &[Camera]) -> String {
    let recs: Vec<CameraRecord> = cams.iter().map(CameraRecord::from_camera).collect();
    serde_json::to_string_pretty(&recs).expect("camera records serialize")
}

/// Writes cameras as a JSON array of
/// `{fx, fy, cx, cy, width, height, world_to_camera[16], near, far|null}`.
pub fn save_camera_set(path: impl AsRef<Path>, cams: &[Camera]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, camera_set_to_json(cams)).map_err(|e| Error::io(path, e))
}
