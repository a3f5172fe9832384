//! Splat math: rotations, covariances, SH color, screen-space projection and Plücker rays.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::primitives::{normalize_quat, PrimitiveSet};

pub const SH_C0: f64 = 0.282_094_791_773_878_1;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

/// Added to the diagonal of every projected covariance (pixels squared).
pub const COV2D_EPSILON: f64 = 0.3;

/// Screen-space footprint of a projected splat.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian2D {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    /// Camera-space z.
    pub depth: f64,
    pub color: [f64; 3],
    pub alpha: f64,
}

impl Gaussian2D {
    /// Inverse covariance; `None` for a singular footprint.
    pub fn conic(&self) -> Option<Matrix2<f64>> {
        self.cov.try_inverse()
    }

    /// Unnormalized density `exp(-0.5 d^T cov^-1 d)` at pixel position `p`.
    pub fn density_with(conic: &Matrix2<f64>, mean: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
        let d = p - mean;
        let power = -0.5 * (conic[(0, 0)] * d.x * d.x + 2.0 * conic[(0, 1)] * d.x * d.y + conic[(1, 1)] * d.y * d.y);
        power.exp()
    }

    /// Half extents of the 3-sigma bounding box.
    pub fn radius(&self) -> (f64, f64) {
        (3.0 * self.cov[(0, 0)].sqrt(), 3.0 * self.cov[(1, 1)].sqrt())
    }
}

/// Unit line representation: direction plus moment `origin x direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluckerRay {
    pub direction: Vector3<f64>,
    pub moment: Vector3<f64>,
}

impl PluckerRay {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.direction.x,
            self.direction.y,
            self.direction.z,
            self.moment.x,
            self.moment.y,
            self.moment.z,
        ]
    }
}

/// Rotation matrix of a `(w, x, y, z)` quaternion (normalized first).
pub fn quat_to_rotation(q: [f64; 4]) -> Result<Matrix3<f64>> {
    let [w, x, y, z] = normalize_quat(q)?;
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// `R diag(s)^2 R^T`, symmetric by construction.
pub fn build_covariance(q: [f64; 4], scale: &Vector3<f64>) -> Result<Matrix3<f64>> {
    if scale.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Invalid(format!("non-positive scale {scale:?}")));
    }
    let r = quat_to_rotation(q)?;
    let m = Matrix3::from_fn(|i, j| r[(i, j)] * scale[j]);
    let mut cov = Matrix3::zeros();
    for i in 0..3 {
        for j in i..3 {
            let v = m[(i, 0)] * m[(j, 0)] + m[(i, 1)] * m[(j, 1)] + m[(i, 2)] * m[(j, 2)];
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// Evaluates degree-0/1 SH color as `0.5 + sum Y_lm c_lm`, clamped to `[0, 1]`.
///
/// `coeffs` is channel-major: `S` coefficients for red, then green, then blue.
pub fn eval_sh(coeffs: &[f64], dir: &Vector3<f64>, degree: u8) -> Result<[f64; 3]> {
    if degree > 1 {
        return Err(Error::Invalid(format!("unsupported SH degree {degree}")));
    }
    let s = (degree as usize + 1).pow(2);
    if coeffs.len() != 3 * s {
        return Err(Error::Shape(format!(
            "expected {} SH coefficients for degree {degree}, got {}",
            3 * s,
            coeffs.len()
        )));
    }
    Ok(eval_sh_unchecked(coeffs, dir, s))
}

#[inline]
pub(crate) fn eval_sh_unchecked(coeffs: &[f64], dir: &Vector3<f64>, s: usize) -> [f64; 3] {
    let mut rgb = [0.0; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let k = &coeffs[c * s..(c + 1) * s];
        let mut v = SH_C0 * k[0];
        if s == 4 {
            v += -SH_C1 * dir.y * k[1] + SH_C1 * dir.z * k[2] - SH_C1 * dir.x * k[3];
        }
        *out = (0.5 + v).clamp(0.0, 1.0);
    }
    rgb
}

/// Projects splat `i` of `prims` into `cam`; `None` when culled by the near plane.
pub fn project_gaussian(prims: &PrimitiveSet, i: usize, cam: &Camera) -> Option<Gaussian2D> {
    let mu = prims.positions[i];
    let rot = cam.rotation();
    let p = rot * mu + cam.translation();
    if p.z < cam.near {
        return None;
    }
    let cov3 = build_covariance(prims.rotations[i], &prims.scale(i)).ok()?;
    let (x, y, z) = (p.x, p.y, p.z);
    let j = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let t = j * rot;
    let mut cov = t * cov3 * t.transpose();
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    cov[(0, 1)] = off;
    cov[(1, 0)] = off;
    cov[(0, 0)] += COV2D_EPSILON;
    cov[(1, 1)] += COV2D_EPSILON;
    let dir = (mu - cam.center()).normalize();
    let color = eval_sh_unchecked(prims.sh_coeffs(i), &dir, prims.sh_per_channel());
    Some(Gaussian2D {
        mean: Vector2::new(cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy),
        cov,
        depth: z,
        color,
        alpha: prims.alpha(i),
    })
}

/// Plücker embedding of the ray through the center of pixel `(u, v)`.
pub fn plucker_embedding(cam: &Camera, u: u32, v: u32) -> PluckerRay {
    let (o, d) = cam.pixel_ray(u, v);
    PluckerRay {
        direction: d,
        moment: o.cross(&d),
    }
}
