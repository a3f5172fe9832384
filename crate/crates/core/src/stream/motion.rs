//! Analytic scene motion used by synthetic sequences and the ground-truth tracker.

use std::path::Path;

use nalgebra::{Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position of a point as a function of frame index, relative to its frame-0 position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Motion {
    None,
    /// `p(t) = p0 + t v`.
    Translate { velocity: [f64; 3] },
    /// Rotation about an axis through `center` by `omega t exp(-r^2 / radius^2)`, where `r`
    /// is the distance to the axis.
    Swirl {
        center: [f64; 3],
        axis: [f64; 3],
        angular_velocity: f64,
        radius: f64,
    },
}

impl Motion {
    fn swirl_rotation(center: &Vector3<f64>, axis: &Vector3<f64>, omega: f64, radius: f64, p: &Vector3<f64>, t: f64) -> Rotation3<f64> {
        let a = Unit::new_normalize(*axis);
        let rel = p - center;
        let r2 = (rel - a.into_inner() * a.dot(&rel)).norm_squared();
        Rotation3::from_axis_angle(&a, omega * t * (-r2 / (radius * radius)).exp())
    }

    /// Position at frame `t` of the point that sits at `p0` in frame 0.
    pub fn position(&self, p0: &Vector3<f64>, t: f64) -> Vector3<f64> {
        match self {
            Motion::None => *p0,
            Motion::Translate { velocity } => p0 + Vector3::from(*velocity) * t,
            Motion::Swirl {
                center,
                axis,
                angular_velocity,
                radius,
            } => {
                let c = Vector3::from(*center);
                let rot = Self::swirl_rotation(&c, &Vector3::from(*axis), *angular_velocity, *radius, p0, t);
                c + rot * (p0 - c)
            }
        }
    }

    /// Frame-0 position of the point found at `p` in frame `t`.
    pub fn origin(&self, p: &Vector3<f64>, t: f64) -> Vector3<f64> {
        match self {
            Motion::None => *p,
            Motion::Translate { velocity } => p - Vector3::from(*velocity) * t,
            Motion::Swirl {
                center,
                axis,
                angular_velocity,
                radius,
            } => {
                // The distance to the axis is invariant, so the angle is known from `p`.
                let c = Vector3::from(*center);
                let rot = Self::swirl_rotation(&c, &Vector3::from(*axis), *angular_velocity, *radius, p, t);
                c + rot.inverse() * (p - c)
            }
        }
    }

    /// Moves a point observed in frame `from` to frame `to`.
    pub fn transfer(&self, p: &Vector3<f64>, from: usize, to: usize) -> Vector3<f64> {
        if let Motion::Translate { velocity } = self {
            return p + Vector3::from(*velocity) * (to as f64 - from as f64);
        }
        self.position(&self.origin(p, from as f64), to as f64)
    }

    pub fn is_static(&self) -> bool {
        match self {
            Motion::None => true,
            Motion::Translate { velocity } => velocity.iter().all(|&v| v == 0.0),
            Motion::Swirl { angular_velocity, .. } => *angular_velocity == 0.0,
        }
    }
}

/// Contents of `motion.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionFile {
    pub frames: usize,
    #[serde(flatten)]
    pub motion: Motion,
}

impl MotionFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("motion serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
