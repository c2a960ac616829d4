//! Voxel grid geometry and physical-coordinate mapping.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// A regular 3D voxel grid with physical pitch in micrometres.
///
/// Voxel `i` along an axis is centred at `(i + 0.5) * pitch`, so a grid of
/// `n` voxels spans `[0, n * pitch)` in physical space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Voxel pitch in um.
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, nz: usize, dx: f64, dy: f64, dz: f64) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::Invalid("grid counts must be >= 1".into()));
        }
        if dx <= 0.0 || dy <= 0.0 || dz <= 0.0 {
            return Err(Error::Invalid("grid pitches must be > 0".into()));
        }
        Ok(Self {
            nx,
            ny,
            nz,
            dx,
            dy,
            dz,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Physical extent (um) covered by the grid.
    pub fn extent(&self) -> [f64; 3] {
        [
            self.nx as f64 * self.dx,
            self.ny as f64 * self.dy,
            self.nz as f64 * self.dz,
        ]
    }

    /// Flat index of voxel `(ix, iy, iz)`; storage is x-fastest, then y, then z.
    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.ny + iy) * self.nx + ix
    }

    /// Centre of voxel `(ix, iy, iz)` in physical coordinates (um).
    pub fn world_coords(&self, ix: usize, iy: usize, iz: usize) -> Result<[f64; 3]> {
        if ix >= self.nx || iy >= self.ny || iz >= self.nz {
            return Err(Error::OutOfBounds(ix, iy, iz, self.nx, self.ny, self.nz));
        }
        Ok([
            (ix as f64 + 0.5) * self.dx,
            (iy as f64 + 0.5) * self.dy,
            (iz as f64 + 0.5) * self.dz,
        ])
    }

    /// Voxel whose centre is nearest to a point strictly inside the grid.
    pub fn nearest_voxel(&self, p: [f64; 3]) -> Result<(usize, usize, usize)> {
        let ext = self.extent();
        if p.iter().zip(ext.iter()).any(|(v, e)| *v < 0.0 || *v >= *e) {
            return Err(Error::Invalid(format!(
                "point ({}, {}, {}) outside grid extent",
                p[0], p[1], p[2]
            )));
        }
        Ok((
            ((p[0] / self.dx) as usize).min(self.nx - 1),
            ((p[1] / self.dy) as usize).min(self.ny - 1),
            ((p[2] / self.dz) as usize).min(self.nz - 1),
        ))
    }

    /// Same lateral geometry with a different axial layout.
    pub fn with_axial(&self, nz: usize, dz: f64) -> Result<Self> {
        Self::new(self.nx, self.ny, nz, self.dx, self.dy, dz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(512, 512, 50, 0.1725, 0.1725, 5.0).unwrap()
    }

    #[test]
    fn world_coords_center_convention() {
        let g = grid();
        assert_eq!(g.world_coords(0, 0, 0).unwrap(), [0.08625, 0.08625, 2.5]);
        let far = g.world_coords(511, 511, 49).unwrap();
        for (got, want) in far.iter().zip([88.23375, 88.23375, 247.5]) {
            assert!((got - want).abs() < 1e-9);
        }
        let unit = GridSpec::new(4, 4, 4, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(unit.world_coords(0, 0, 0).unwrap(), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn world_coords_bounds_error() {
        let g = grid();
        assert!(matches!(
            g.world_coords(512, 0, 0),
            Err(Error::OutOfBounds(..))
        ));
        assert!(matches!(
            g.world_coords(0, 0, 50),
            Err(Error::OutOfBounds(..))
        ));
    }

    #[test]
    fn nearest_voxel_inverts_world_coords() {
        let g = grid();
        for &(ix, iy, iz) in &[(0usize, 0usize, 0usize), (511, 511, 49), (17, 256, 3)] {
            let p = g.world_coords(ix, iy, iz).unwrap();
            assert_eq!(g.nearest_voxel(p).unwrap(), (ix, iy, iz));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(GridSpec::new(0, 1, 1, 1.0, 1.0, 1.0).is_err());
        assert!(GridSpec::new(1, 1, 1, 0.0, 1.0, 1.0).is_err());
        assert!(GridSpec::new(1, 1, 1, 1.0, -1.0, 1.0).is_err());
    }
}
