//! Gaussian primitive sets and their flat parameter layout.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Offsets of the raw Gaussian parameter vector `G` used in voxel attributes and by the
/// refinement head: `[mu(3), opacity logit, quaternion wxyz(4), log scale(3), sh(3*S)]`.
pub mod layout {
    pub const POSITION: usize = 0;
    pub const OPACITY: usize = 3;
    pub const ROTATION: usize = 4;
    pub const LOG_SCALE: usize = 8;
    pub const SH: usize = 11;

    /// Coefficients per color channel for an SH degree.
    pub const fn sh_per_channel(degree: u8) -> usize {
        (degree as usize + 1) * (degree as usize + 1)
    }

    /// Length of `G` for an SH degree.
    pub const fn gaussian_dim(degree: u8) -> usize {
        SH + 3 * sh_per_channel(degree)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// One splat with owned parameters; convenient for building scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat {
    pub position: Vector3<f64>,
    /// Pre-activation opacity (logit).
    pub opacity: f64,
    /// Quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub log_scale: Vector3<f64>,
    /// `3 * S` coefficients, channel-major.
    pub sh: Vec<f64>,
    pub features: Vec<f64>,
}

impl Splat {
    /// Isotropic splat with a degree-0 color given in `[0, 1]` RGB.
    pub fn isotropic(position: Vector3<f64>, alpha: f64, scale: f64, rgb: [f64; 3]) -> Splat {
        let c0 = crate::gaussian::SH_C0;
        Splat {
            position,
            opacity: logit(alpha),
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::repeat(scale.ln()),
            sh: rgb.iter().map(|c| (c - 0.5) / c0).collect(),
            features: Vec::new(),
        }
    }
}

/// Per-splat latent features of uniform dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub dim: usize,
    pub data: Vec<f64>,
}

/// Structure-of-arrays splat container.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveSet {
    pub sh_degree: u8,
    pub positions: Vec<Vector3<f64>>,
    pub opacities: Vec<f64>,
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<Vector3<f64>>,
    pub sh: Vec<f64>,
    pub features: Option<Features>,
}

impl PrimitiveSet {
    pub fn new(sh_degree: u8, feature_dim: Option<usize>) -> Self {
        PrimitiveSet {
            sh_degree,
            positions: Vec::new(),
            opacities: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            sh: Vec::new(),
            features: feature_dim.map(|dim| Features {
                dim,
                data: Vec::new(),
            }),
        }
    }

    pub fn from_splats(sh_degree: u8, splats: &[Splat]) -> Result<Self> {
        let dim = splats.first().map(|s| s.features.len()).unwrap_or(0);
        let mut set = PrimitiveSet::new(sh_degree, (dim > 0).then_some(dim));
        for s in splats {
            set.push(s)?;
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn sh_per_channel(&self) -> usize {
        layout::sh_per_channel(self.sh_degree)
    }

    /// Length of the raw Gaussian parameter vector.
    pub fn gaussian_dim(&self) -> usize {
        layout::gaussian_dim(self.sh_degree)
    }

    pub fn feature_dim(&self) -> usize {
        self.features.as_ref().map_or(0, |f| f.dim)
    }

    pub fn push(&mut self, s: &Splat) -> Result<()> {
        let n_sh = 3 * self.sh_per_channel();
        if s.sh.len() != n_sh {
            return Err(Error::Shape(format!(
                "splat has {} SH coefficients, degree {} needs {n_sh}",
                s.sh.len(),
                self.sh_degree
            )));
        }
        let q = normalize_quat(s.rotation)?;
        match &mut self.features {
            Some(f) if f.dim != s.features.len() => {
                return Err(Error::Shape(format!(
                    "feature dimension {} != {}",
                    s.features.len(),
                    f.dim
                )))
            }
            Some(f) => f.data.extend_from_slice(&s.features),
            None if !s.features.is_empty() => {
                return Err(Error::Shape("set carries no features".into()))
            }
            None => {}
        }
        self.positions.push(s.position);
        self.opacities.push(s.opacity);
        self.rotations.push(q);
        self.log_scales.push(s.log_scale);
        self.sh.extend_from_slice(&s.sh);
        Ok(())
    }

    pub fn splat(&self, i: usize) -> Splat {
        let n_sh = 3 * self.sh_per_channel();
        Splat {
            position: self.positions[i],
            opacity: self.opacities[i],
            rotation: self.rotations[i],
            log_scale: self.log_scales[i],
            sh: self.sh[i * n_sh..(i + 1) * n_sh].to_vec(),
            features: self.feature(i).to_vec(),
        }
    }

    pub fn sh_coeffs(&self, i: usize) -> &[f64] {
        let n_sh = 3 * self.sh_per_channel();
        &self.sh[i * n_sh..(i + 1) * n_sh]
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        match &self.features {
            Some(f) => &f.data[i * f.dim..(i + 1) * f.dim],
            None => &[],
        }
    }

    /// Post-activation opacity.
    pub fn alpha(&self, i: usize) -> f64 {
        sigmoid(self.opacities[i])
    }

    pub fn scale(&self, i: usize) -> Vector3<f64> {
        self.log_scales[i].map(f64::exp)
    }

    /// Writes the raw parameter vector `G` of splat `i` into `out`.
    pub fn write_gaussian(&self, i: usize, out: &mut [f64]) {
        use layout::*;
        let p = &self.positions[i];
        out[POSITION..POSITION + 3].copy_from_slice(&[p.x, p.y, p.z]);
        out[OPACITY] = self.opacities[i];
        out[ROTATION..ROTATION + 4].copy_from_slice(&self.rotations[i]);
        let s = &self.log_scales[i];
        out[LOG_SCALE..LOG_SCALE + 3].copy_from_slice(&[s.x, s.y, s.z]);
        out[SH..self.gaussian_dim()].copy_from_slice(self.sh_coeffs(i));
    }

    /// Appends a splat given its raw parameter vector (quaternion normalized, zero
    /// quaternions mapped to identity).
    pub fn push_gaussian(&mut self, g: &[f64], features: &[f64]) {
        use layout::*;
        self.positions
            .push(Vector3::new(g[POSITION], g[POSITION + 1], g[POSITION + 2]));
        self.opacities.push(g[OPACITY]);
        let q = [g[ROTATION], g[ROTATION + 1], g[ROTATION + 2], g[ROTATION + 3]];
        self.rotations
            .push(normalize_quat(q).unwrap_or([1.0, 0.0, 0.0, 0.0]));
        self.log_scales
            .push(Vector3::new(g[LOG_SCALE], g[LOG_SCALE + 1], g[LOG_SCALE + 2]));
        self.sh.extend_from_slice(&g[SH..self.gaussian_dim()]);
        if let Some(f) = &mut self.features {
            debug_assert_eq!(f.dim, features.len());
            f.data.extend_from_slice(features);
        }
    }

    /// Concatenates sets sharing SH degree and feature dimension.
    pub fn concat(sets: &[&PrimitiveSet]) -> Result<PrimitiveSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::Invalid("no primitive sets to concatenate".into()))?;
        let mut out = PrimitiveSet::new(first.sh_degree, first.features.as_ref().map(|f| f.dim));
        for s in sets {
            if s.sh_degree != out.sh_degree || s.feature_dim() != out.feature_dim() {
                return Err(Error::Shape(format!(
                    "cannot concatenate sets with (sh degree {}, features {}) and ({}, {})",
                    out.sh_degree,
                    out.feature_dim(),
                    s.sh_degree,
                    s.feature_dim()
                )));
            }
            out.positions.extend_from_slice(&s.positions);
            out.opacities.extend_from_slice(&s.opacities);
            out.rotations.extend_from_slice(&s.rotations);
            out.log_scales.extend_from_slice(&s.log_scales);
            out.sh.extend_from_slice(&s.sh);
            if let (Some(o), Some(f)) = (&mut out.features, &s.features) {
                o.data.extend_from_slice(&f.data);
            }
        }
        Ok(out)
    }

    /// Splats at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> PrimitiveSet {
        let mut out = PrimitiveSet::new(self.sh_degree, self.features.as_ref().map(|f| f.dim));
        for &i in indices {
            out.positions.push(self.positions[i]);
            out.opacities.push(self.opacities[i]);
            out.rotations.push(self.rotations[i]);
            out.log_scales.push(self.log_scales[i]);
            out.sh.extend_from_slice(self.sh_coeffs(i));
            if let Some(f) = &mut out.features {
                f.data.extend_from_slice(self.feature(i));
            }
        }
        out
    }

    /// Drops features, keeping the Gaussian parameters.
    pub fn without_features(&self) -> PrimitiveSet {
        PrimitiveSet {
            features: None,
            ..self.clone()
        }
    }

    /// Axis-aligned bounding box diagonal of the splat centers.
    pub fn extent(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let mut lo = self.positions[0];
        let mut hi = lo;
        for p in &self.positions {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (hi - lo).norm()
    }
}

/// Normalizes a `(w, x, y, z)` quaternion; errors on zero norm.
pub fn normalize_quat(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Invalid("zero-norm quaternion".into()));
    }
    if n == 1.0 {
        return Ok(q);
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}
