//! Fine-grid deposit: each splat scatters opacity-weighted attributes onto the eight voxel
//! centers around it.

use nalgebra::Vector3;

use super::kernel::cubic_kernel_1d;
use super::VoxelGridConfig;
use crate::error::{Error, Result};
use crate::primitives::{layout, PrimitiveSet};

/// Voxels with accumulated weight below this are dropped.
pub const MIN_VOXEL_WEIGHT: f64 = 1e-8;

/// Normalized transfer weights of one splat (up to eight in-grid corners).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub len: usize,
    pub voxels: [usize; 8],
    pub weights: [f64; 8],
}

impl Stencil {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.voxels[..self.len].iter().copied().zip(self.weights[..self.len].iter().copied())
    }
}

/// The 2x2x2 cell of voxel centers around `p` with kernel weights normalized over the
/// in-grid corners, or `None` when `p` falls outside the grid.
pub fn splat_stencil(cfg: &VoxelGridConfig, p: &Vector3<f64>) -> Option<Stencil> {
    let n = cfg.world_to_ndc(p)?;
    let ndc = [n.z, n.y, n.x];
    let mut base = [0i64; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let g = ndc[a] * cfg.fine_dims[a] as f64 - 0.5;
        let b = g.floor();
        base[a] = b as i64;
        frac[a] = g - b;
    }
    let mut st = Stencil {
        len: 0,
        voxels: [0; 8],
        weights: [0.0; 8],
    };
    let mut sum = 0.0;
    for corner in 0..8 {
        let bit = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
        let mut idx = [0usize; 3];
        let mut k = 1.0;
        let mut inside = true;
        for a in 0..3 {
            let c = base[a] + bit[a] as i64;
            if c < 0 || c >= cfg.fine_dims[a] as i64 {
                inside = false;
                break;
            }
            idx[a] = c as usize;
            k *= cubic_kernel_1d(bit[a] as f64 - frac[a]);
        }
        if !inside {
            continue;
        }
        st.voxels[st.len] = cfg.fine_index(idx[0], idx[1], idx[2]);
        st.weights[st.len] = k;
        st.len += 1;
        sum += k;
    }
    if !(sum > 0.0) {
        return None;
    }
    for w in &mut st.weights[..st.len] {
        *w /= sum;
    }
    Some(st)
}

/// Sparse fine grid holding fused attributes `E = [F ; G]` of occupied voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct FineGrid {
    pub dims: [usize; 3],
    pub feature_dim: usize,
    pub sh_degree: u8,
    /// Occupied linear indices, ascending.
    pub indices: Vec<usize>,
    /// Fusion weights `W_j`.
    pub weights: Vec<f64>,
    /// Sum of transfer weights times fusion multipliers: how many splats' worth of
    /// opacity the voxel carries.
    pub coverage: Vec<f64>,
    /// Row-major `len x attr_dim`.
    pub attrs: Vec<f64>,
    /// Splats that fell outside the grid.
    pub skipped: usize,
}

impl FineGrid {
    pub fn empty(cfg: &VoxelGridConfig, feature_dim: usize, sh_degree: u8) -> Self {
        FineGrid {
            dims: cfg.fine_dims,
            feature_dim,
            sh_degree,
            indices: Vec::new(),
            weights: Vec::new(),
            coverage: Vec::new(),
            attrs: Vec::new(),
            skipped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn attr_dim(&self) -> usize {
        self.feature_dim + layout::gaussian_dim(self.sh_degree)
    }

    pub fn attr(&self, k: usize) -> &[f64] {
        let a = self.attr_dim();
        &self.attrs[k * a..(k + 1) * a]
    }

    /// Gaussian slice `G` of occupied voxel `k`.
    pub fn gaussian(&self, k: usize) -> &[f64] {
        &self.attr(k)[self.feature_dim..]
    }

    /// Position of linear index `idx` among occupied voxels.
    pub fn find(&self, idx: usize) -> Option<usize> {
        self.indices.binary_search(&idx).ok()
    }

    /// Weight of linear index `idx`, zero when unoccupied.
    pub fn weight_at(&self, idx: usize) -> f64 {
        self.find(idx).map_or(0.0, |k| self.weights[k])
    }

    /// `sum_j W_j` in ascending index order.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `sum_j W_j E_j`.
    pub fn weighted_attr_sum(&self) -> Vec<f64> {
        let a = self.attr_dim();
        let mut out = vec![0.0; a];
        for k in 0..self.len() {
            for (o, v) in out.iter_mut().zip(self.attr(k)) {
                *o += self.weights[k] * v;
            }
        }
        out
    }

    /// Keeps only voxels whose coarse block is in `blocks` (ascending).
    pub fn retain_blocks(&mut self, cfg: &VoxelGridConfig, blocks: &[usize]) {
        let keep: Vec<bool> = self
            .indices
            .iter()
            .map(|&i| blocks.binary_search(&cfg.block_of(i).0).is_ok())
            .collect();
        self.filter(&keep);
    }

    fn filter(&mut self, keep: &[bool]) {
        let a = self.attr_dim();
        let mut w = 0;
        for k in 0..self.len() {
            if keep[k] {
                self.indices[w] = self.indices[k];
                self.weights[w] = self.weights[k];
                self.coverage[w] = self.coverage[k];
                self.attrs.copy_within(k * a..(k + 1) * a, w * a);
                w += 1;
            }
        }
        self.indices.truncate(w);
        self.weights.truncate(w);
        self.coverage.truncate(w);
        self.attrs.truncate(w * a);
    }

    /// In voxels flagged by `is_static` and occupied in both grids, copies the
    /// even-indexed attribute channels from `past`.
    pub fn retain_even_channels(&mut self, past: &FineGrid, is_static: impl Fn(usize) -> bool) -> Result<usize> {
        if past.attr_dim() != self.attr_dim() || past.dims != self.dims {
            return Err(Error::Shape("keyframe grid layout differs from current grid".into()));
        }
        let a = self.attr_dim();
        let mut n = 0;
        for k in 0..self.len() {
            let idx = self.indices[k];
            if !is_static(idx) {
                continue;
            }
            if let Some(p) = past.find(idx) {
                for c in (0..a).step_by(2) {
                    self.attrs[k * a + c] = past.attrs[p * a + c];
                }
                n += 1;
            }
        }
        Ok(n)
    }

    /// Dense `[D, H, W]` weight volume (debugging and small grids only).
    pub fn dense_weights(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dims.iter().product()];
        for (k, &i) in self.indices.iter().enumerate() {
            out[i] = self.weights[k];
        }
        out
    }
}

/// Deposits every splat with unit multiplier.
pub fn deposit_splats(prims: &PrimitiveSet, cfg: &VoxelGridConfig) -> FineGrid {
    deposit_weighted(prims, None, cfg).expect("no multipliers to mismatch")
}

/// Deposits splats whose fusion weights `alpha_k` are scaled by `multipliers[k]`.
///
/// `W_j = sum_k w_jk a_k m_k` and `E_j = sum_k w_jk a_k m_k [F_k ; G_k] / W_j`, accumulated
/// per voxel in ascending splat order so the result is independent of scheduling.
pub fn deposit_weighted(prims: &PrimitiveSet, multipliers: Option<&[f64]>, cfg: &VoxelGridConfig) -> Result<FineGrid> {
    if let Some(m) = multipliers {
        if m.len() != prims.len() {
            return Err(Error::Shape(format!(
                "{} fusion multipliers for {} splats",
                m.len(),
                prims.len()
            )));
        }
    }
    let fdim = prims.feature_dim();
    let mut grid = FineGrid::empty(cfg, fdim, prims.sh_degree);
    let a = grid.attr_dim();

    let mut entries: Vec<(usize, u32, f64)> = Vec::with_capacity(prims.len() * 8);
    for k in 0..prims.len() {
        let m = multipliers.map_or(1.0, |m| m[k]);
        if m == 0.0 {
            continue;
        }
        match splat_stencil(cfg, &prims.positions[k]) {
            Some(st) => entries.extend(st.iter().map(|(v, w)| (v, k as u32, w))),
            None => grid.skipped += 1,
        }
    }
    entries.sort_unstable_by_key(|&(v, k, _)| (v, k));

    let mut e = vec![0.0; a];
    let mut acc = vec![0.0; a];
    let mut start = 0;
    while start < entries.len() {
        let voxel = entries[start].0;
        let mut end = start;
        let (mut wsum, mut cov) = (0.0, 0.0);
        acc.iter_mut().for_each(|v| *v = 0.0);
        while end < entries.len() && entries[end].0 == voxel {
            let (_, k, w) = entries[end];
            let k = k as usize;
            let m = multipliers.map_or(1.0, |m| m[k]);
            let aw = w * prims.alpha(k) * m;
            e[..fdim].copy_from_slice(prims.feature(k));
            prims.write_gaussian(k, &mut e[fdim..]);
            for (o, v) in acc.iter_mut().zip(&e) {
                *o += aw * v;
            }
            wsum += aw;
            cov += w * m;
            end += 1;
        }
        if wsum >= MIN_VOXEL_WEIGHT {
            grid.indices.push(voxel);
            grid.weights.push(wsum);
            grid.coverage.push(cov);
            grid.attrs.extend(acc.iter().map(|v| v / wsum));
        }
        start = end;
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Camera;
    use crate::primitives::Splat;
    use nalgebra::Matrix4;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn grid_cfg(dims: [usize; 3]) -> VoxelGridConfig {
        let cam = Camera {
            fx: 40.0,
            fy: 40.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
            world_to_camera: Matrix4::identity(),
            near: 1.0,
            far: 10.0,
        };
        VoxelGridConfig::new(&cam, dims, [2, 4, 4]).unwrap()
    }

    fn splat_at_ndc(cfg: &VoxelGridConfig, n: Vector3<f64>, alpha: f64, feat: Vec<f64>) -> Splat {
        let mut s = Splat::isotropic(cfg.ndc_to_world(&n), alpha, 0.05, [0.3, 0.5, 0.7]);
        s.features = feat;
        s
    }

    #[test]
    fn cell_center_gives_equal_weights() {
        let cfg = grid_cfg([8, 16, 16]);
        // Voxel boundaries sit at integer multiples of the spacing.
        let n = Vector3::new(5.0 / 16.0, 9.0 / 16.0, 3.0 / 8.0);
        let st = splat_stencil(&cfg, &cfg.ndc_to_world(&n)).unwrap();
        assert_eq!(st.len, 8);
        for (_, w) in st.iter() {
            assert!((w - 0.125).abs() < 1e-9, "{w}");
        }
    }

    #[test]
    fn on_voxel_center_weights() {
        let cfg = grid_cfg([8, 16, 16]);
        let n = cfg.voxel_center(cfg.fine_index(3, 7, 9));
        let st = splat_stencil(&cfg, &cfg.ndc_to_world(&n)).unwrap();
        let mut ws: Vec<f64> = st.iter().map(|(_, w)| w).collect();
        ws.sort_by(|a, b| b.total_cmp(a));
        // Corner products of K(0)=2/3 and K(1)=1/6, normalized by (5/6)^3.
        let k0 = 2.0 / 3.0;
        let k1 = 1.0 / 6.0;
        let total: f64 = (k0 + k1) * (k0 + k1) * (k0 + k1);
        let want = [k0 * k0 * k0, k0 * k0 * k1, k0 * k0 * k1, k0 * k0 * k1, k0 * k1 * k1, k0 * k1 * k1, k0 * k1 * k1, k1 * k1 * k1];
        for (w, e) in ws.iter().zip(want) {
            assert!((w - e / total).abs() < 1e-6, "{w} vs {}", e / total);
        }
        assert!((ws[0] - 0.512).abs() < 1e-3);
    }

    #[test]
    fn two_coincident_splats_average_features() {
        let cfg = grid_cfg([8, 16, 16]);
        let n = Vector3::new(0.41, 0.57, 0.33);
        let a = splat_at_ndc(&cfg, n, 0.5, vec![1.0, 2.0]);
        let b = splat_at_ndc(&cfg, n, 0.5, vec![3.0, -2.0]);
        let prims = PrimitiveSet::from_splats(0, &[a.clone(), b]).unwrap();
        let grid = deposit_splats(&prims, &cfg);
        assert_eq!(grid.len(), 8);
        let mut g = vec![0.0; prims.gaussian_dim()];
        prims.write_gaussian(0, &mut g);
        for k in 0..grid.len() {
            let e = grid.attr(k);
            assert!((e[0] - 2.0).abs() < 1e-12 && e[1].abs() < 1e-12);
            for (x, y) in e[2..].iter().zip(&g) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outside_splats_are_counted() {
        let cfg = grid_cfg([8, 16, 16]);
        let s = Splat::isotropic(Vector3::new(0.0, 0.0, -3.0), 0.5, 0.1, [0.5; 3]);
        let grid = deposit_splats(&PrimitiveSet::from_splats(0, &[s]).unwrap(), &cfg);
        assert_eq!(grid.skipped, 1);
        assert!(grid.is_empty());
    }

    #[test]
    fn boundary_splat_drops_outside_corners() {
        let cfg = grid_cfg([8, 16, 16]);
        let n = Vector3::new(0.01, 0.5, 0.5);
        let st = splat_stencil(&cfg, &cfg.ndc_to_world(&n)).unwrap();
        assert_eq!(st.len, 4);
        assert!((st.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_multiplier_removes_splat() {
        let cfg = grid_cfg([8, 16, 16]);
        let s = splat_at_ndc(&cfg, Vector3::new(0.4, 0.4, 0.4), 0.5, vec![]);
        let prims = PrimitiveSet::from_splats(0, &[s]).unwrap();
        let grid = deposit_weighted(&prims, Some(&[0.0]), &cfg).unwrap();
        assert!(grid.is_empty());
        assert_eq!(grid.skipped, 0);
    }

    fn random_prims(seed: u64, n: usize, cfg: &VoxelGridConfig) -> PrimitiveSet {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let splats: Vec<Splat> = (0..n)
            .map(|_| {
                let nd = Vector3::new(rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95));
                let f = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                splat_at_ndc(cfg, nd, rng.gen_range(0.05..0.95), f)
            })
            .collect();
        PrimitiveSet::from_splats(0, &splats).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn mass_is_conserved(seed in 0u64..10_000) {
            let cfg = grid_cfg([8, 16, 16]);
            let prims = random_prims(seed, 200, &cfg);
            let grid = deposit_splats(&prims, &cfg);
            let got = grid.weighted_attr_sum();
            let mut want = vec![0.0; grid.attr_dim()];
            let mut g = vec![0.0; prims.gaussian_dim()];
            for k in 0..prims.len() {
                prims.write_gaussian(k, &mut g);
                let e: Vec<f64> = prims.feature(k).iter().chain(&g).copied().collect();
                for (o, v) in want.iter_mut().zip(e) {
                    *o += prims.alpha(k) * v;
                }
            }
            for (a, b) in got.iter().zip(&want) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }

        #[test]
        fn deposit_is_permutation_invariant(seed in 0u64..10_000) {
            let cfg = grid_cfg([8, 16, 16]);
            let prims = random_prims(seed, 100, &cfg);
            let mut order: Vec<usize> = (0..prims.len()).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
            let a = deposit_splats(&prims, &cfg);
            let b = deposit_splats(&prims.subset(&order), &cfg);
            prop_assert_eq!(&a.indices, &b.indices);
            for (x, y) in a.attrs.iter().zip(&b.attrs) {
                prop_assert!((x - y).abs() < 1e-6);
            }
            for (x, y) in a.weights.iter().zip(&b.weights) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn stencil_is_partition_of_unity(x in 0.0f64..1.0, y in 0.0f64..1.0, z in 0.0f64..1.0) {
            let cfg = grid_cfg([8, 16, 16]);
            if let Some(st) = splat_stencil(&cfg, &cfg.ndc_to_world(&Vector3::new(x, y, z))) {
                prop_assert!((st.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(st.iter().all(|(_, w)| w >= 0.0));
            }
        }
    }
}
