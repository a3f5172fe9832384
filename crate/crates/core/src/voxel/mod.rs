//! Splat-to-voxel transfer: NDC grid, cubic-kernel deposit, coarse hierarchy and
//! weight-ranked sparsification.

pub mod coarse;
pub mod dump;
pub mod fine;
pub mod kernel;

use nalgebra::Vector3;

use crate::camera::Camera;
use crate::error::{Error, Result};

pub use coarse::{coarse_weights, coarsen, embed_blocks, sparsify, CoarseGrid};
pub use fine::{deposit_splats, deposit_weighted, splat_stencil, FineGrid, Stencil};
pub use kernel::{cubic_kernel, cubic_kernel_1d};

/// Geometry of the fine grid and its coarse blocks in a reference camera's NDC volume.
///
/// NDC x and y are pixel coordinates divided by image size; z is linear in disparity,
/// `0` at `near` and `1` at `far` (or infinity).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGridConfig {
    /// `[D, H, W]`.
    pub fine_dims: [usize; 3],
    /// `[d, h, w]`.
    pub coarse_factors: [usize; 3],
    pub camera: Camera,
    pub near: f64,
    pub far: f64,
}

impl VoxelGridConfig {
    /// Grid spanning `camera`'s frustum between its near and far planes.
    pub fn new(camera: &Camera, fine_dims: [usize; 3], coarse_factors: [usize; 3]) -> Result<Self> {
        if fine_dims.contains(&0) || coarse_factors.contains(&0) {
            return Err(Error::Config(format!(
                "grid dims {fine_dims:?} and coarse factors {coarse_factors:?} must be positive"
            )));
        }
        for a in 0..3 {
            if fine_dims[a] % coarse_factors[a] != 0 {
                return Err(Error::Config(format!(
                    "coarse factors {coarse_factors:?} do not divide fine dims {fine_dims:?}"
                )));
            }
        }
        Ok(VoxelGridConfig {
            fine_dims,
            coarse_factors,
            camera: camera.clone(),
            near: camera.near,
            far: camera.far,
        })
    }

    pub fn from_run_config(camera: &Camera, cfg: &crate::io::RunConfig) -> Result<Self> {
        Self::new(camera, cfg.fine_dims(camera.width, camera.height), cfg.coarse_factors)
    }

    pub fn coarse_dims(&self) -> [usize; 3] {
        [
            self.fine_dims[0] / self.coarse_factors[0],
            self.fine_dims[1] / self.coarse_factors[1],
            self.fine_dims[2] / self.coarse_factors[2],
        ]
    }

    pub fn fine_count(&self) -> usize {
        self.fine_dims.iter().product()
    }

    pub fn coarse_count(&self) -> usize {
        self.coarse_dims().iter().product()
    }

    pub fn block_len(&self) -> usize {
        self.coarse_factors.iter().product()
    }

    /// Voxel spacing in NDC, `[z, y, x]`.
    pub fn spacing(&self) -> [f64; 3] {
        [
            1.0 / self.fine_dims[0] as f64,
            1.0 / self.fine_dims[1] as f64,
            1.0 / self.fine_dims[2] as f64,
        ]
    }

    #[inline]
    pub fn fine_index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.fine_dims[1] + y) * self.fine_dims[2] + x
    }

    #[inline]
    pub fn fine_coords(&self, idx: usize) -> [usize; 3] {
        let [_, h, w] = self.fine_dims;
        [idx / (h * w), (idx / w) % h, idx % w]
    }

    /// Coarse block containing fine voxel `idx`, and the voxel's z-major offset in it.
    #[inline]
    pub fn block_of(&self, idx: usize) -> (usize, usize) {
        let [z, y, x] = self.fine_coords(idx);
        let [fd, fh, fw] = self.coarse_factors;
        let [_, ch, cw] = self.coarse_dims();
        let block = ((z / fd) * ch + y / fh) * cw + x / fw;
        let offset = ((z % fd) * fh + y % fh) * fw + x % fw;
        (block, offset)
    }

    /// Fine index of voxel `offset` in coarse block `block`.
    pub fn fine_of(&self, block: usize, offset: usize) -> usize {
        let [_, ch, cw] = self.coarse_dims();
        let [fd, fh, fw] = self.coarse_factors;
        let (bz, by, bx) = (block / (ch * cw), (block / cw) % ch, block % cw);
        let (oz, oy, ox) = (offset / (fh * fw), (offset / fw) % fh, offset % fw);
        self.fine_index(bz * fd + oz, by * fh + oy, bx * fw + ox)
    }

    /// NDC `(x, y, z)` of a world point, or `None` outside the unit cube or before `near`.
    pub fn world_to_ndc(&self, p: &Vector3<f64>) -> Option<Vector3<f64>> {
        let c = self.camera.to_camera(p);
        if !(c.z >= self.near) {
            return None;
        }
        let u = self.camera.fx * c.x / c.z + self.camera.cx;
        let v = self.camera.fy * c.y / c.z + self.camera.cy;
        let n = Vector3::new(
            u / self.camera.width as f64,
            v / self.camera.height as f64,
            self.depth_to_ndc(c.z),
        );
        n.iter().all(|&t| (0.0..=1.0).contains(&t)).then_some(n)
    }

    /// Disparity-linear depth coordinate.
    pub fn depth_to_ndc(&self, z: f64) -> f64 {
        if self.far.is_infinite() {
            1.0 - self.near / z
        } else {
            (1.0 / self.near - 1.0 / z) / (1.0 / self.near - 1.0 / self.far)
        }
    }

    pub fn ndc_to_depth(&self, zn: f64) -> f64 {
        let inv_far = if self.far.is_infinite() { 0.0 } else { 1.0 / self.far };
        1.0 / (1.0 / self.near - zn * (1.0 / self.near - inv_far))
    }

    pub fn ndc_to_world(&self, n: &Vector3<f64>) -> Vector3<f64> {
        let z = self.ndc_to_depth(n.z);
        self.camera
            .unproject(n.x * self.camera.width as f64, n.y * self.camera.height as f64, z)
    }

    /// NDC center of fine voxel `idx`.
    pub fn voxel_center(&self, idx: usize) -> Vector3<f64> {
        let [z, y, x] = self.fine_coords(idx);
        let [hz, hy, hx] = self.spacing();
        Vector3::new((x as f64 + 0.5) * hx, (y as f64 + 0.5) * hy, (z as f64 + 0.5) * hz)
    }
}
