//! Debug dump of a fine grid: one JSON header line, then dense little-endian f32 planes
//! (the weight volume followed by one volume per attribute channel), each `D x H x W`
//! in z, y, x order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fine::FineGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub dims: [usize; 3],
    pub coarse_factors: [usize; 3],
    pub feature_dim: usize,
    pub sh_degree: u8,
    pub attr_dim: usize,
    pub occupied: usize,
}

pub fn write_grid_dump(mut w: impl Write, grid: &FineGrid, coarse_factors: [usize; 3]) -> Result<()> {
    let header = DumpHeader {
        dims: grid.dims,
        coarse_factors,
        feature_dim: grid.feature_dim,
        sh_degree: grid.sh_degree,
        attr_dim: grid.attr_dim(),
        occupied: grid.len(),
    };
    let io = |e| Error::io("<grid dump>", e);
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io)?;
    let n: usize = grid.dims.iter().product();
    let mut plane = vec![0f32; n];
    let emit = |plane: &[f32], w: &mut dyn Write| -> Result<()> {
        let bytes: Vec<u8> = plane.iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&bytes).map_err(io)
    };
    for (k, &i) in grid.indices.iter().enumerate() {
        plane[i] = grid.weights[k] as f32;
    }
    emit(&plane, &mut w)?;
    for c in 0..grid.attr_dim() {
        plane.iter_mut().for_each(|v| *v = 0.0);
        for (k, &i) in grid.indices.iter().enumerate() {
            plane[i] = grid.attr(k)[c] as f32;
        }
        emit(&plane, &mut w)?;
    }
    Ok(())
}

pub fn save_grid_dump(path: impl AsRef<Path>, grid: &FineGrid, coarse_factors: [usize; 3]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_grid_dump(std::io::BufWriter::new(f), grid, coarse_factors)
}

/// Header and planes (weights first) of a dump.
pub fn read_grid_dump(bytes: &[u8]) -> Result<(DumpHeader, Vec<Vec<f32>>)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("grid dump has no header line".into()))?;
    let header: DumpHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::Format(format!("grid dump header: {e}")))?;
    let n: usize = header.dims.iter().product();
    let body = &bytes[nl + 1..];
    let planes = header.attr_dim + 1;
    if body.len() != planes * n * 4 {
        return Err(Error::Format(format!(
            "grid dump body has {} bytes, expected {}",
            body.len(),
            planes * n * 4
        )));
    }
    let vals: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((header, vals.chunks(n).map(<[f32]>::to_vec).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Camera;
    use crate::primitives::{PrimitiveSet, Splat};
    use crate::voxel::{deposit_splats, VoxelGridConfig};
    use nalgebra::{Matrix4, Vector3};

    #[test]
    fn dump_round_trip() {
        let cam = Camera {
            fx: 20.0,
            fy: 20.0,
            cx: 8.0,
            cy: 8.0,
            width: 16,
            height: 16,
            world_to_camera: Matrix4::identity(),
            near: 1.0,
            far: 5.0,
        };
        let cfg = VoxelGridConfig::new(&cam, [4, 8, 8], [2, 4, 4]).unwrap();
        let s = Splat::isotropic(Vector3::new(0.05, -0.1, 2.0), 0.7, 0.1, [0.2, 0.4, 0.6]);
        let grid = deposit_splats(&PrimitiveSet::from_splats(0, &[s]).unwrap(), &cfg);
        let mut buf = Vec::new();
        write_grid_dump(&mut buf, &grid, [2, 4, 4]).unwrap();
        let (h, planes) = read_grid_dump(&buf).unwrap();
        assert_eq!(h.dims, [4, 8, 8]);
        assert_eq!(planes.len(), grid.attr_dim() + 1);
        for (k, &i) in grid.indices.iter().enumerate() {
            assert_eq!(planes[0][i], grid.weights[k] as f32);
            assert_eq!(planes[1][i], grid.attr(k)[0] as f32);
        }
        assert!(read_grid_dump(&buf[..buf.len() - 1]).is_err());
    }
}
