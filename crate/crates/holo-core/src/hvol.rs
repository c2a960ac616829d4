//! HVOL volume file format.
//!
//! Layout: magic `HVOL`, u8 version (1), u8 dtype code, u32 nx, ny, nz
//! (little-endian), then the raw payload. Dtype codes: 1 = f32 real,
//! 2 = f32 complex interleaved (re, im), 3 = u8 binary. 2D holograms are
//! stored with nz = 1. Each volume `<name>.hvol` carries a JSON sidecar
//! `<name>.meta.json` with the voxel pitches and acquisition provenance.

use crate::grid::GridSpec;
use crate::volume::{BinaryVolume, ComplexVolume, Hologram, RealVolume};
use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"HVOL";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    Real = 1,
    Complex = 2,
    Binary = 3,
}

impl Dtype {
    fn from_code(code: u8, path: &Path) -> Result<Self> {
        match code {
            1 => Ok(Dtype::Real),
            2 => Ok(Dtype::Complex),
            3 => Ok(Dtype::Binary),
            other => Err(format_err(path, format!("unknown dtype code {other}"))),
        }
    }
}

/// Sidecar metadata stored as `<name>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct VolumeMeta {
    /// Voxel pitches in um.
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wavelength: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_medium: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density_per_ul: Option<f64>,
    /// Free-form provenance (source hashes, slice conventions, ...).
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl VolumeMeta {
    pub fn from_grid(grid: &GridSpec) -> Self {
        Self {
            dx: grid.dx,
            dy: grid.dy,
            dz: grid.dz,
            ..Self::default()
        }
    }

    pub fn with_optics(mut self, wavelength: f64, n_medium: f64) -> Self {
        self.wavelength = Some(wavelength);
        self.n_medium = Some(n_medium);
        self
    }

    pub fn with_extra(mut self, key: &str, value: serde_json::Value) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }
}

pub fn meta_path(volume_path: &Path) -> PathBuf {
    volume_path.with_extension("meta.json")
}

fn format_err(path: &Path, reason: String) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason,
    }
}

fn write_header(out: &mut impl Write, dtype: Dtype, grid: &GridSpec) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&[VERSION, dtype as u8])?;
    for n in [grid.nx, grid.ny, grid.nz] {
        out.write_all(&(n as u32).to_le_bytes())?;
    }
    Ok(())
}

fn write_volume(
    path: &Path,
    dtype: Dtype,
    grid: &GridSpec,
    payload: &[u8],
    meta: &VolumeMeta,
) -> Result<()> {
    let mut buf = Vec::with_capacity(18 + payload.len());
    write_header(&mut buf, dtype, grid)?;
    buf.extend_from_slice(payload);
    fs::write(path, buf)?;
    fs::write(meta_path(path), serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

struct RawVolume {
    dtype: Dtype,
    nx: usize,
    ny: usize,
    nz: usize,
    payload: Vec<u8>,
}

fn read_raw(path: &Path) -> Result<RawVolume> {
    let mut file = fs::File::open(path)?;
    let mut header = [0u8; 18];
    file.read_exact(&mut header)
        .map_err(|_| format_err(path, "truncated header".into()))?;
    if &header[0..4] != MAGIC {
        return Err(format_err(path, "bad magic".into()));
    }
    if header[4] != VERSION {
        return Err(format_err(path, format!("unsupported version {}", header[4])));
    }
    let dtype = Dtype::from_code(header[5], path)?;
    let dim = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
    let (nx, ny, nz) = (dim(6), dim(10), dim(14));
    let count = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .ok_or_else(|| format_err(path, "dimension overflow".into()))?;
    if count == 0 {
        return Err(format_err(path, "zero-sized volume".into()));
    }
    let elem = match dtype {
        Dtype::Real => 4,
        Dtype::Complex => 8,
        Dtype::Binary => 1,
    };
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() != count * elem {
        return Err(format_err(
            path,
            format!("payload is {} bytes, expected {}", payload.len(), count * elem),
        ));
    }
    Ok(RawVolume {
        dtype,
        nx,
        ny,
        nz,
        payload,
    })
}

fn read_meta(path: &Path) -> Result<VolumeMeta> {
    let mp = meta_path(path);
    let text = fs::read_to_string(&mp)
        .map_err(|_| format_err(path, format!("missing sidecar {}", mp.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn grid_from(raw: &RawVolume, meta: &VolumeMeta) -> Result<GridSpec> {
    GridSpec::new(raw.nx, raw.ny, raw.nz, meta.dx, meta.dy, meta.dz)
}

fn f32s_le(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect()
}

pub fn write_real(path: &Path, vol: &RealVolume, meta: &VolumeMeta) -> Result<()> {
    let mut payload = Vec::with_capacity(vol.data.len() * 4);
    for &v in &vol.data {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_volume(path, Dtype::Real, &vol.grid, &payload, meta)
}

pub fn read_real(path: &Path) -> Result<(RealVolume, VolumeMeta)> {
    let raw = read_raw(path)?;
    if raw.dtype != Dtype::Real {
        return Err(format_err(path, format!("expected real volume, found {:?}", raw.dtype)));
    }
    let meta = read_meta(path)?;
    let grid = grid_from(&raw, &meta)?;
    let data = f32s_le(&raw.payload).into_iter().map(f64::from).collect();
    Ok((RealVolume::from_data(grid, data)?, meta))
}

pub fn write_complex(path: &Path, vol: &ComplexVolume, meta: &VolumeMeta) -> Result<()> {
    let mut payload = Vec::with_capacity(vol.data.len() * 8);
    for c in &vol.data {
        payload.extend_from_slice(&(c.re as f32).to_le_bytes());
        payload.extend_from_slice(&(c.im as f32).to_le_bytes());
    }
    write_volume(path, Dtype::Complex, &vol.grid, &payload, meta)
}

pub fn read_complex(path: &Path) -> Result<(ComplexVolume, VolumeMeta)> {
    let raw = read_raw(path)?;
    if raw.dtype != Dtype::Complex {
        return Err(format_err(path, format!("expected complex volume, found {:?}", raw.dtype)));
    }
    let meta = read_meta(path)?;
    let grid = grid_from(&raw, &meta)?;
    let parts = f32s_le(&raw.payload);
    let data = parts
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0] as f64, p[1] as f64))
        .collect();
    Ok((ComplexVolume::from_data(grid, data)?, meta))
}

pub fn write_binary(path: &Path, vol: &BinaryVolume, meta: &VolumeMeta) -> Result<()> {
    vol.validate()?;
    write_volume(path, Dtype::Binary, &vol.grid, &vol.data, meta)
}

pub fn read_binary(path: &Path) -> Result<(BinaryVolume, VolumeMeta)> {
    let raw = read_raw(path)?;
    if raw.dtype != Dtype::Binary {
        return Err(format_err(path, format!("expected binary volume, found {:?}", raw.dtype)));
    }
    if let Some(&bad) = raw.payload.iter().find(|&&v| v > 1) {
        return Err(format_err(path, format!("binary payload contains value {bad}")));
    }
    let meta = read_meta(path)?;
    let grid = grid_from(&raw, &meta)?;
    Ok((BinaryVolume::from_data(grid, raw.payload)?, meta))
}

/// Holograms are real volumes with nz = 1 plus mandatory optics metadata.
pub fn write_hologram(path: &Path, holo: &Hologram, meta: &VolumeMeta) -> Result<()> {
    let grid = holo.grid();
    let vol = RealVolume::from_data(grid, holo.data.clone())?;
    let meta = VolumeMeta {
        dx: holo.dx,
        dy: holo.dy,
        dz: if meta.dz > 0.0 { meta.dz } else { 1.0 },
        wavelength: Some(holo.wavelength),
        n_medium: Some(holo.n_medium),
        ..meta.clone()
    };
    write_real(path, &vol, &meta)
}

pub fn read_hologram(path: &Path) -> Result<(Hologram, VolumeMeta)> {
    let (vol, meta) = read_real(path)?;
    if vol.grid.nz != 1 {
        return Err(format_err(path, format!("hologram must have nz=1, found {}", vol.grid.nz)));
    }
    let wavelength = meta
        .wavelength
        .ok_or_else(|| format_err(path, "sidecar missing wavelength".into()))?;
    let n_medium = meta
        .n_medium
        .ok_or_else(|| format_err(path, "sidecar missing n_medium".into()))?;
    let holo = Hologram::new(
        vol.grid.nx,
        vol.grid.ny,
        vol.grid.dx,
        vol.grid.dy,
        wavelength,
        n_medium,
        vol.data,
    )?;
    Ok((holo, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn real_roundtrip_zero_volume() {
        let dir = tmp();
        let path = dir.path().join("zero.hvol");
        let grid = GridSpec::new(4, 4, 4, 0.5, 0.5, 1.0).unwrap();
        let vol = RealVolume::zeros(grid);
        let meta = VolumeMeta::from_grid(&grid);
        write_real(&path, &vol, &meta).unwrap();
        let (back, meta2) = read_real(&path).unwrap();
        assert_eq!(back, vol);
        assert_eq!(meta2, meta);
    }

    #[test]
    fn complex_roundtrip_is_bit_exact() {
        let dir = tmp();
        let path = dir.path().join("c.hvol");
        let grid = GridSpec::new(8, 8, 8, 0.1725, 0.1725, 0.1184).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        // f32-representable values so the disk format is lossless
        let data: Vec<Complex64> = (0..grid.voxel_count())
            .map(|_| {
                Complex64::new(
                    rng.gen::<f32>() as f64,
                    (rng.gen::<f32>() - 0.5) as f64,
                )
            })
            .collect();
        let vol = ComplexVolume::from_data(grid, data).unwrap();
        let meta = VolumeMeta::from_grid(&grid).with_optics(0.6328, 1.33);
        write_complex(&path, &vol, &meta).unwrap();
        let (back, _) = read_complex(&path).unwrap();
        assert_eq!(back, vol);
        // second write is byte-identical
        let bytes1 = fs::read(&path).unwrap();
        let path2 = dir.path().join("c2.hvol");
        write_complex(&path2, &back, &meta).unwrap();
        assert_eq!(bytes1, fs::read(&path2).unwrap());
    }

    #[test]
    fn binary_roundtrip_and_validation() {
        let dir = tmp();
        let path = dir.path().join("b.hvol");
        let grid = GridSpec::new(3, 2, 2, 1.0, 1.0, 5.0).unwrap();
        let mut vol = BinaryVolume::zeros(grid);
        vol.data[5] = 1;
        write_binary(&path, &vol, &VolumeMeta::from_grid(&grid)).unwrap();
        let (back, _) = read_binary(&path).unwrap();
        assert_eq!(back, vol);

        vol.data[0] = 2;
        assert!(write_binary(&path, &vol, &VolumeMeta::from_grid(&grid)).is_err());
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tmp();
        let path = dir.path().join("t.hvol");
        let grid = GridSpec::new(4, 4, 2, 1.0, 1.0, 1.0).unwrap();
        let vol = RealVolume::zeros(grid);
        write_real(&path, &vol, &VolumeMeta::from_grid(&grid)).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_real(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn corrupt_magic_and_dtype_mismatch() {
        let dir = tmp();
        let path = dir.path().join("m.hvol");
        let grid = GridSpec::new(2, 2, 1, 1.0, 1.0, 1.0).unwrap();
        write_real(&path, &RealVolume::zeros(grid), &VolumeMeta::from_grid(&grid)).unwrap();

        // dtype mismatch: reading a real volume as complex
        assert!(matches!(read_complex(&path), Err(Error::Format { .. })));

        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_real(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn hologram_roundtrip_keeps_optics() {
        let dir = tmp();
        let path = dir.path().join("h.hvol");
        let holo = Hologram::new(4, 4, 0.1725, 0.1725, 0.6328, 1.33, vec![1.0; 16]).unwrap();
        write_hologram(&path, &holo, &VolumeMeta::default()).unwrap();
        let (back, meta) = read_hologram(&path).unwrap();
        assert_eq!(back, holo);
        assert_eq!(meta.wavelength, Some(0.6328));
        assert_eq!(meta.n_medium, Some(1.33));
    }
}
