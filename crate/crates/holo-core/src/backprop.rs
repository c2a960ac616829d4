//! Holographic backpropagation of a recorded intensity into a coarse
//! complex volume.
//!
//! The hologram is treated as a real-valued field and propagated backwards
//! slice by slice: slice `j` (1-based) sits at distance `j * dz` from the
//! hologram plane, so the returned volume is ordered hologram-side first.
//! [`BackpropOptions::flip_to_sample_order`] reverses the slices so they run
//! from the illumination side to the exit face, matching ground-truth
//! volumes.

use crate::par;
use crate::volume::{ComplexVolume, Hologram};
use crate::wavesim::{apply_kernel, kz_table, Fft2, OpticalConfig};
use crate::{Error, GridSpec, Result};
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackpropOptions {
    /// Number of reconstructed slices.
    pub nz: usize,
    /// Slice spacing in um.
    pub dz: f64,
    /// Subtract the hologram mean before propagating (off by default; raw
    /// intensity is propagated and the DC term survives).
    pub subtract_dc: bool,
    /// Reorder slices from illumination side to exit face.
    pub flip_to_sample_order: bool,
}

impl BackpropOptions {
    pub fn new(nz: usize, dz: f64) -> Self {
        Self {
            nz,
            dz,
            subtract_dc: false,
            flip_to_sample_order: false,
        }
    }
}

/// Backpropagate a hologram into `nz` slices spaced `dz` apart.
pub fn backpropagate_volume(
    holo: &Hologram,
    opts: &BackpropOptions,
    cfg: &OpticalConfig,
) -> Result<ComplexVolume> {
    if opts.nz == 0 || opts.dz <= 0.0 {
        return Err(Error::Invalid("backprop needs nz >= 1 and dz > 0".into()));
    }
    if (cfg.wavelength - holo.wavelength).abs() > 1e-12
        || (cfg.n_medium - holo.n_medium).abs() > 1e-12
    {
        return Err(Error::Invalid(
            "optical config disagrees with hologram metadata".into(),
        ));
    }

    let (nx, ny) = (holo.nx, holo.ny);
    let mean = if opts.subtract_dc {
        holo.data.iter().sum::<f64>() / holo.data.len() as f64
    } else {
        0.0
    };
    let mut spectrum: Vec<Complex64> = holo
        .data
        .iter()
        .map(|&v| Complex64::new(v - mean, 0.0))
        .collect();
    let fft = Fft2::new(nx, ny);
    fft.forward(&mut spectrum);
    let kz = kz_table(nx, ny, holo.dx, holo.dy, cfg);

    let grid = GridSpec::new(nx, ny, opts.nz, holo.dx, holo.dy, opts.dz)?;
    let mut vol = ComplexVolume::zeros(grid);
    let plane = nx * ny;
    par::for_each_chunk_mut(&mut vol.data, plane, |i, slab| {
        let j = if opts.flip_to_sample_order {
            opts.nz - i
        } else {
            i + 1
        };
        let fft_local = Fft2::new(nx, ny);
        slab.copy_from_slice(&spectrum);
        apply_kernel(slab, &kz, -(j as f64) * opts.dz);
        fft_local.inverse(slab);
    });
    Ok(vol)
}

/// Axial amplitude trace max |R| per slice; handy for focus diagnostics.
pub fn axial_max_amplitude(vol: &ComplexVolume) -> Vec<f64> {
    (0..vol.grid.nz)
        .map(|iz| {
            vol.slice(iz)
                .iter()
                .map(|c| c.norm())
                .fold(0.0f64, f64::max)
        })
        .collect()
}
