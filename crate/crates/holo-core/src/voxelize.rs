//! Rasterization of particle fields into refractive-index volumes and
//! axially binned binary ground truth.

use crate::grid::GridSpec;
use crate::par;
use crate::particles::ParticleField;
use crate::volume::{BinaryVolume, RealVolume};
use crate::{Error, Result};

/// Write the index-contrast cross-section of slice `iz` into `out`
/// (length nx*ny, x-fastest). A voxel takes the contrast of the particle
/// whose centre is within D/2 of the voxel centre.
pub fn rasterize_slice(field: &ParticleField, grid: &GridSpec, iz: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), grid.nx * grid.ny);
    out.fill(0.0);
    let zc = (iz as f64 + 0.5) * grid.dz;
    for p in &field.particles {
        let r = p.d / 2.0;
        let dz = zc - p.z;
        let rr2 = r * r - dz * dz;
        if rr2 <= 0.0 {
            continue;
        }
        let rr = rr2.sqrt();
        let iy_lo = (((p.y - rr) / grid.dy - 0.5).ceil().max(0.0)) as usize;
        let iy_hi = ((p.y + rr) / grid.dy - 0.5).floor().min(grid.ny as f64 - 1.0);
        if iy_hi < 0.0 {
            continue;
        }
        for iy in iy_lo..=iy_hi as usize {
            let dy = (iy as f64 + 0.5) * grid.dy - p.y;
            let rx2 = rr2 - dy * dy;
            if rx2 < 0.0 {
                continue;
            }
            let rx = rx2.sqrt();
            let ix_lo = (((p.x - rx) / grid.dx - 0.5).ceil().max(0.0)) as usize;
            let ix_hi = ((p.x + rx) / grid.dx - 0.5).floor().min(grid.nx as f64 - 1.0);
            if ix_hi < 0.0 {
                continue;
            }
            let row = &mut out[iy * grid.nx..(iy + 1) * grid.nx];
            for (ix, v) in row
                .iter_mut()
                .enumerate()
                .take(ix_hi as usize + 1)
                .skip(ix_lo)
            {
                let dx = (ix as f64 + 0.5) * grid.dx - p.x;
                if dx * dx + dy * dy + dz * dz <= r * r {
                    *v = p.dn;
                }
            }
        }
    }
}

/// Rasterize a whole field into a refractive-index volume.
pub fn voxelize(field: &ParticleField, grid: &GridSpec) -> RealVolume {
    let mut vol = RealVolume::zeros(*grid);
    let plane = grid.nx * grid.ny;
    par::for_each_chunk_mut(&mut vol.data, plane, |iz, slice| {
        rasterize_slice(field, grid, iz, slice);
    });
    vol
}

/// Project a fine sample grid onto `coarse_nz` axial slices and mark every
/// coarse voxel that receives at least one occupied fine voxel.
///
/// Fine slice centres map to the nearest coarse slice centre; the coarse
/// pitch is chosen so both grids span the same physical depth.
pub fn make_ground_truth(
    field: &ParticleField,
    fine: &GridSpec,
    coarse_nz: usize,
) -> Result<BinaryVolume> {
    if coarse_nz == 0 {
        return Err(Error::Invalid("coarse grid needs nz >= 1".into()));
    }
    let depth = fine.nz as f64 * fine.dz;
    let coarse_dz = depth / coarse_nz as f64;
    let coarse = GridSpec::new(fine.nx, fine.ny, coarse_nz, fine.dx, fine.dy, coarse_dz)?;

    // Fine slices [k_lo(i), k_hi(i)) whose centres land nearest to coarse
    // slice i: centre z in [i*coarse_dz, (i+1)*coarse_dz).
    let fine_range = |i: usize| {
        let z0 = i as f64 * coarse_dz;
        let z1 = (i + 1) as f64 * coarse_dz;
        let k_lo = ((z0 / fine.dz - 0.5).ceil().max(0.0)) as usize;
        let mut k_hi = ((z1 / fine.dz - 0.5).ceil().max(0.0)) as usize;
        if i + 1 == coarse_nz {
            k_hi = fine.nz;
        }
        (k_lo, k_hi.min(fine.nz))
    };

    let mut gt = BinaryVolume::zeros(coarse);
    let plane = fine.nx * fine.ny;
    par::for_each_chunk_mut(&mut gt.data, plane, |i, slab| {
        let (k_lo, k_hi) = fine_range(i);
        let mut scratch = vec![0.0f64; plane];
        for k in k_lo..k_hi {
            rasterize_slice(field, fine, k, &mut scratch);
            for (dst, &v) in slab.iter_mut().zip(scratch.iter()) {
                if v != 0.0 {
                    *dst = 1;
                }
            }
        }
    });
    Ok(gt)
}
