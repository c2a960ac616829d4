//! Normalization and patch extraction: turns raw volumes and holograms into
//! network-ready tensors and paired training examples.

use crate::grid::GridSpec;
use crate::volume::{BinaryVolume, ComplexVolume, Hologram, RealVolume};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

fn mean_std(data: &[f64]) -> (f64, f64) {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

const STD_FLOOR: f64 = 1e-12;

/// Standardize a real volume to zero mean and unit standard deviation
/// (statistics over the whole volume).
pub fn normalize_real(v: &RealVolume) -> Result<RealVolume> {
    let (mean, std) = mean_std(&v.data);
    if std < STD_FLOOR {
        return Err(Error::Degenerate(
            "volume has zero standard deviation".into(),
        ));
    }
    Ok(RealVolume {
        grid: v.grid,
        data: v.data.iter().map(|&x| (x - mean) / std).collect(),
    })
}

/// Amplitude of a complex volume standardized to zero mean, unit std.
pub fn normalize_volume(v: &ComplexVolume) -> Result<RealVolume> {
    normalize_real(&v.amplitude())
}

/// Standardize a full hologram before any patch cropping. The result is a
/// one-slice real volume (values may be negative).
pub fn normalize_hologram(h: &Hologram) -> Result<RealVolume> {
    let (mean, std) = mean_std(&h.data);
    if std < STD_FLOOR {
        return Err(Error::Degenerate(
            "hologram has zero standard deviation".into(),
        ));
    }
    let grid = h.grid();
    Ok(RealVolume {
        grid,
        data: h.data.iter().map(|&x| (x - mean) / std).collect(),
    })
}

/// Lateral crop offsets (x, y) in raster order for square patches of side
/// `patch` with the given overlap. Fails when the geometry does not tile.
pub fn crop_offsets(
    nx: usize,
    ny: usize,
    patch: usize,
    overlap: usize,
) -> Result<Vec<(usize, usize)>> {
    if patch == 0 || patch > nx || patch > ny {
        return Err(Error::Geometry(format!(
            "patch {patch} does not fit {nx}x{ny}"
        )));
    }
    if overlap >= patch {
        return Err(Error::Geometry("overlap must be smaller than patch".into()));
    }
    let stride = patch - overlap;
    if (nx - patch) % stride != 0 || (ny - patch) % stride != 0 {
        return Err(Error::Geometry(format!(
            "({nx}-{patch}) and ({ny}-{patch}) must be divisible by stride {stride}"
        )));
    }
    let steps_x = (nx - patch) / stride + 1;
    let steps_y = (ny - patch) / stride + 1;
    let mut offsets = Vec::with_capacity(steps_x * steps_y);
    for sy in 0..steps_y {
        for sx in 0..steps_x {
            offsets.push((sx * stride, sy * stride));
        }
    }
    Ok(offsets)
}

fn crop_grid(grid: &GridSpec, patch: usize) -> GridSpec {
    GridSpec::new(patch, patch, grid.nz, grid.dx, grid.dy, grid.dz).expect("valid crop grid")
}

macro_rules! crop_impl {
    ($name:ident, $ty:ident) => {
        /// Crop a lateral window (all z slices) at offset (ox, oy).
        pub fn $name(vol: &$ty, ox: usize, oy: usize, patch: usize) -> Result<$ty> {
            let g = vol.grid;
            if ox + patch > g.nx || oy + patch > g.ny {
                return Err(Error::Geometry(format!(
                    "crop ({ox},{oy})+{patch} exceeds {}x{}",
                    g.nx, g.ny
                )));
            }
            let mut out = $ty::zeros(crop_grid(&g, patch));
            for iz in 0..g.nz {
                let src = vol.slice(iz);
                let dst = out.slice_mut(iz);
                for py in 0..patch {
                    let s = (oy + py) * g.nx + ox;
                    dst[py * patch..(py + 1) * patch].copy_from_slice(&src[s..s + patch]);
                }
            }
            Ok(out)
        }
    };
}

crop_impl!(crop_real, RealVolume);
crop_impl!(crop_binary, BinaryVolume);

/// Write a patch back into a full volume at offset (ox, oy); used to stitch
/// non-overlapping predictions.
pub fn paste_real(dst: &mut RealVolume, patch: &RealVolume, ox: usize, oy: usize) -> Result<()> {
    let g = dst.grid;
    let p = patch.grid.nx;
    if patch.grid.ny != p || patch.grid.nz != g.nz || ox + p > g.nx || oy + p > g.ny {
        return Err(Error::Geometry("paste window does not fit".into()));
    }
    for iz in 0..g.nz {
        let src = patch.slice(iz);
        let dst_s = dst.slice_mut(iz);
        for py in 0..p {
            let d = (oy + py) * g.nx + ox;
            dst_s[d..d + p].copy_from_slice(&src[py * p..(py + 1) * p]);
        }
    }
    Ok(())
}

/// One patch of a training example: paths into full HVOL volumes plus the
/// lateral crop offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRef {
    pub input: PathBuf,
    pub hologram: PathBuf,
    pub label: PathBuf,
    pub ox: usize,
    pub oy: usize,
}

/// Dataset manifest with deterministic entry ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub patch: usize,
    pub entries: Vec<PatchRef>,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Build manifest entries for one (input, hologram, label) volume triple.
pub fn manifest_entries(
    input: &Path,
    hologram: &Path,
    label: &Path,
    nx: usize,
    ny: usize,
    patch: usize,
    overlap: usize,
) -> Result<Vec<PatchRef>> {
    Ok(crop_offsets(nx, ny, patch, overlap)?
        .into_iter()
        .map(|(ox, oy)| PatchRef {
            input: input.to_path_buf(),
            hologram: hologram.to_path_buf(),
            label: label.to_path_buf(),
            ox,
            oy,
        })
        .collect())
}
