//! Split-step beam-propagation forward model for inline holograms.
//!
//! Free-space steps use the analytic angular-spectrum transfer function
//! `exp(i z sqrt(k_m^2 - kx^2 - ky^2))` with evanescent components zeroed;
//! each sample slice then applies the thin phase screen
//! `exp(i k0 dn dz)`. The hologram is the exit-plane intensity.

use crate::grid::GridSpec;
use crate::par;
use crate::particles::ParticleField;
use crate::volume::{Hologram, RealVolume};
use crate::voxelize::rasterize_slice;
use crate::{Error, Result};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

/// Plane-wave illumination parameters shared by simulation and
/// backpropagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalConfig {
    /// Vacuum wavelength in um.
    pub wavelength: f64,
    /// Refractive index of the background medium.
    pub n_medium: f64,
    /// Fraction of the medium wavenumber kept by the angular-spectrum kernel,
    /// in (0, 1]. 1.0 keeps every propagating mode.
    pub band_limit: f64,
}

impl OpticalConfig {
    pub fn new(wavelength: f64, n_medium: f64, band_limit: f64) -> Result<Self> {
        if wavelength <= 0.0 {
            return Err(Error::Invalid("wavelength must be > 0".into()));
        }
        if n_medium < 1.0 {
            return Err(Error::Invalid("n_medium must be >= 1".into()));
        }
        if !(band_limit > 0.0 && band_limit <= 1.0) {
            return Err(Error::Invalid("band_limit must be in (0, 1]".into()));
        }
        Ok(Self {
            wavelength,
            n_medium,
            band_limit,
        })
    }

    /// HeNe illumination in water.
    pub fn hene_water() -> Self {
        Self {
            wavelength: 0.6328,
            n_medium: 1.33,
            band_limit: 1.0,
        }
    }

    /// Vacuum wavenumber 2*pi/lambda0.
    pub fn k0(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Wavenumber in the medium.
    pub fn k_medium(&self) -> f64 {
        self.k0() * self.n_medium
    }

    pub fn wavelength_medium(&self) -> f64 {
        self.wavelength / self.n_medium
    }
}

/// A complex scalar field sampled on a lateral grid (x-fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField2 {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub data: Vec<Complex64>,
}

impl ComplexField2 {
    pub fn plane_wave(nx: usize, ny: usize, dx: f64, dy: f64) -> Self {
        Self {
            nx,
            ny,
            dx,
            dy,
            data: vec![Complex64::new(1.0, 0.0); nx * ny],
        }
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Planned 2D FFT for one lateral grid size.
pub struct Fft2 {
    nx: usize,
    ny: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx,
            ny,
            row_fwd: planner.plan_fft(nx, FftDirection::Forward),
            row_inv: planner.plan_fft(nx, FftDirection::Inverse),
            col_fwd: planner.plan_fft(ny, FftDirection::Forward),
            col_inv: planner.plan_fft(ny, FftDirection::Inverse),
        }
    }

    fn pass(fft: &Arc<dyn Fft<f64>>, data: &mut [Complex64], len: usize) {
        let fft = Arc::clone(fft);
        par::for_each_chunk_mut(data, len, move |_, row| {
            let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
            fft.process_with_scratch(row, &mut scratch);
        });
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.nx * self.ny);
        Self::pass(&self.row_fwd, data, self.nx);
        let mut t = transpose(data, self.nx, self.ny);
        Self::pass(&self.col_fwd, &mut t, self.ny);
        transpose_into(&t, self.ny, self.nx, data);
    }

    /// Inverse transform scaled by 1/(nx*ny), in place.
    pub fn inverse(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.nx * self.ny);
        Self::pass(&self.row_inv, data, self.nx);
        let mut t = transpose(data, self.nx, self.ny);
        Self::pass(&self.col_inv, &mut t, self.ny);
        transpose_into(&t, self.ny, self.nx, data);
        let scale = 1.0 / (self.nx * self.ny) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

fn transpose(data: &[Complex64], nx: usize, ny: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    transpose_into(data, nx, ny, &mut out);
    out
}

/// Blocked transpose of an ny-by-nx (row-major) matrix into out (nx-by-ny).
fn transpose_into(data: &[Complex64], nx: usize, ny: usize, out: &mut [Complex64]) {
    const B: usize = 32;
    for y0 in (0..ny).step_by(B) {
        for x0 in (0..nx).step_by(B) {
            for y in y0..(y0 + B).min(ny) {
                for x in x0..(x0 + B).min(nx) {
                    out[x * ny + y] = data[y * nx + x];
                }
            }
        }
    }
}

/// Axial wavenumber table; negative entries mark filtered (evanescent or
/// band-limited) modes.
pub(crate) fn kz_table(nx: usize, ny: usize, dx: f64, dy: f64, cfg: &OpticalConfig) -> Vec<f64> {
    let km = cfg.k_medium();
    let km2 = km * km;
    let keep2 = (cfg.band_limit * km) * (cfg.band_limit * km);
    let freq = |i: usize, n: usize, d: f64| {
        let signed = if i <= n / 2 {
            i as f64
        } else {
            i as f64 - n as f64
        };
        2.0 * PI * signed / (n as f64 * d)
    };
    let mut table = vec![0.0; nx * ny];
    for iy in 0..ny {
        let ky = freq(iy, ny, dy);
        for ix in 0..nx {
            let kx = freq(ix, nx, dx);
            let kr2 = kx * kx + ky * ky;
            table[iy * nx + ix] = if kr2 <= keep2 && kr2 <= km2 {
                (km2 - kr2).sqrt()
            } else {
                -1.0
            };
        }
    }
    table
}

/// Apply the angular-spectrum kernel for distance `z` (um, signed) to a
/// spectrum in place. Filtered modes are zeroed.
pub(crate) fn apply_kernel(spectrum: &mut [Complex64], kz: &[f64], z: f64) {
    for (v, &kzv) in spectrum.iter_mut().zip(kz.iter()) {
        if kzv < 0.0 {
            *v = Complex64::new(0.0, 0.0);
        } else {
            *v *= Complex64::from_polar(1.0, z * kzv);
        }
    }
}

/// Propagate a field by a signed axial distance `z` in a homogeneous medium.
pub fn angular_spectrum_propagate(
    field: &ComplexField2,
    z: f64,
    cfg: &OpticalConfig,
) -> ComplexField2 {
    let fft = Fft2::new(field.nx, field.ny);
    let kz = kz_table(field.nx, field.ny, field.dx, field.dy, cfg);
    let mut out = field.clone();
    fft.forward(&mut out.data);
    apply_kernel(&mut out.data, &kz, z);
    fft.inverse(&mut out.data);
    out
}

/// Provider of index-contrast cross sections for the split-step march.
pub trait SliceSource {
    fn lateral(&self) -> (usize, usize, f64, f64);
    fn nz(&self) -> usize;
    fn dz(&self) -> f64;
    fn fill(&self, iz: usize, out: &mut [f64]);
}

impl SliceSource for RealVolume {
    fn lateral(&self) -> (usize, usize, f64, f64) {
        (self.grid.nx, self.grid.ny, self.grid.dx, self.grid.dy)
    }
    fn nz(&self) -> usize {
        self.grid.nz
    }
    fn dz(&self) -> f64 {
        self.grid.dz
    }
    fn fill(&self, iz: usize, out: &mut [f64]) {
        out.copy_from_slice(self.slice(iz));
    }
}

/// Rasterizes particle cross sections on the fly, avoiding a materialized
/// fine-grid volume.
pub struct FieldSlices<'a> {
    pub field: &'a ParticleField,
    pub grid: GridSpec,
}

impl SliceSource for FieldSlices<'_> {
    fn lateral(&self) -> (usize, usize, f64, f64) {
        (self.grid.nx, self.grid.ny, self.grid.dx, self.grid.dy)
    }
    fn nz(&self) -> usize {
        self.grid.nz
    }
    fn dz(&self) -> f64 {
        self.grid.dz
    }
    fn fill(&self, iz: usize, out: &mut [f64]) {
        rasterize_slice(self.field, &self.grid, iz, out);
    }
}

/// March an initial field through a scattering volume: for every slice,
/// diffract over one axial step, then apply the slice phase screen.
pub fn bpm_propagate(
    initial: &ComplexField2,
    sample: &impl SliceSource,
    cfg: &OpticalConfig,
) -> ComplexField2 {
    let (nx, ny, dx, dy) = sample.lateral();
    assert_eq!((initial.nx, initial.ny), (nx, ny), "field/sample dims differ");
    let dz = sample.dz();
    let fft = Fft2::new(nx, ny);
    let kz = kz_table(nx, ny, dx, dy, cfg);
    let k0_dz = cfg.k0() * dz;

    let mut u = initial.clone();
    let mut dn = vec![0.0f64; nx * ny];
    for iz in 0..sample.nz() {
        fft.forward(&mut u.data);
        apply_kernel(&mut u.data, &kz, dz);
        fft.inverse(&mut u.data);
        sample.fill(iz, &mut dn);
        for (v, &c) in u.data.iter_mut().zip(dn.iter()) {
            if c != 0.0 {
                *v *= Complex64::from_polar(1.0, k0_dz * c);
            }
        }
    }
    u
}

/// Exit-plane field of a plane wave through a refractive-index volume.
pub fn bpm_exit_field(sample: &impl SliceSource, cfg: &OpticalConfig) -> ComplexField2 {
    let (nx, ny, dx, dy) = sample.lateral();
    let initial = ComplexField2::plane_wave(nx, ny, dx, dy);
    bpm_propagate(&initial, sample, cfg)
}

/// Sensor noise applied to recorded intensities. Default is noiseless,
/// matching the training data recipe.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum NoiseModel {
    #[default]
    None,
    /// Additive Gaussian with the given standard deviation.
    Gaussian { sigma: f64 },
    /// Shot noise with the given photon count per unit intensity.
    Poisson { photons: f64 },
}

/// Record the exit-plane intensity as a hologram.
pub fn record_hologram(exit: &ComplexField2, cfg: &OpticalConfig) -> Hologram {
    Hologram {
        nx: exit.nx,
        ny: exit.ny,
        dx: exit.dx,
        dy: exit.dy,
        wavelength: cfg.wavelength,
        n_medium: cfg.n_medium,
        data: exit.intensity(),
    }
}

/// Apply a sensor-noise model (seeded, deterministic). Values are clamped to
/// stay non-negative.
pub fn apply_noise(holo: &mut Hologram, model: NoiseModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match model {
        NoiseModel::None => {}
        NoiseModel::Gaussian { sigma } => {
            for v in holo.data.iter_mut() {
                // Box-Muller keeps us independent of distribution crates
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen();
                let g = (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
                *v = (*v + sigma * g).max(0.0);
            }
        }
        NoiseModel::Poisson { photons } => {
            for v in holo.data.iter_mut() {
                let lam = (*v * photons).max(0.0);
                // normal approximation is fine at the photon counts used here
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen();
                let g = (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
                *v = ((lam + lam.sqrt() * g).max(0.0)) / photons.max(f64::MIN_POSITIVE);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> OpticalConfig {
        OpticalConfig::hene_water()
    }

    fn rel_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    fn random_band_limited(nx: usize, ny: usize, dx: f64, dy: f64, seed: u64) -> ComplexField2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spectrum: Vec<Complex64> = (0..nx * ny)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let kz = kz_table(nx, ny, dx, dy, &cfg());
        for (v, &k) in spectrum.iter_mut().zip(kz.iter()) {
            if k < 0.0 {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        let fft = Fft2::new(nx, ny);
        fft.inverse(&mut spectrum);
        ComplexField2 {
            nx,
            ny,
            dx,
            dy,
            data: spectrum,
        }
    }

    #[test]
    fn fft2_roundtrip() {
        let f = random_band_limited(32, 16, 0.5, 0.5, 3);
        let fft = Fft2::new(32, 16);
        let mut data = f.data.clone();
        fft.forward(&mut data);
        fft.inverse(&mut data);
        assert!(rel_l2(&data, &f.data) < 1e-13);
    }

    #[test]
    fn zero_distance_is_identity() {
        let f = random_band_limited(64, 64, 0.1725, 0.1725, 1);
        let p = angular_spectrum_propagate(&f, 0.0, &cfg());
        assert!(rel_l2(&p.data, &f.data) < 1e-12);
    }

    #[test]
    fn plane_wave_accumulates_medium_phase() {
        let f = ComplexField2::plane_wave(32, 32, 0.1725, 0.1725);
        let p = angular_spectrum_propagate(&f, 10.0, &cfg());
        let expected = Complex64::from_polar(1.0, cfg().k_medium() * 10.0);
        for v in &p.data {
            assert!((v - expected).norm() < 1e-12);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_backward_roundtrip_on_band_limited_field() {
        let f = random_band_limited(64, 64, 0.1725, 0.1725, 7);
        let fwd = angular_spectrum_propagate(&f, 37.0, &cfg());
        let back = angular_spectrum_propagate(&fwd, -37.0, &cfg());
        assert!(rel_l2(&back.data, &f.data) < 1e-10);
    }

    #[test]
    fn propagating_energy_is_conserved() {
        let f = random_band_limited(48, 48, 0.1725, 0.1725, 9);
        let fft = Fft2::new(48, 48);
        let kz = kz_table(48, 48, 0.1725, 0.1725, &cfg());
        let energy = |field: &ComplexField2| -> f64 {
            let mut s = field.data.clone();
            fft.forward(&mut s);
            s.iter()
                .zip(kz.iter())
                .filter(|(_, &k)| k >= 0.0)
                .map(|(v, _)| v.norm_sqr())
                .sum()
        };
        let e0 = energy(&f);
        let e1 = energy(&angular_spectrum_propagate(&f, 123.4, &cfg()));
        assert!((e1 - e0).abs() / e0 < 1e-10);
    }

    #[test]
    fn empty_volume_gives_unit_plane_wave() {
        let grid = GridSpec::new(32, 32, 40, 0.1725, 0.1725, 0.1184).unwrap();
        let vol = RealVolume::zeros(grid);
        let exit = bpm_exit_field(&vol, &cfg());
        let expected = Complex64::from_polar(1.0, cfg().k_medium() * 40.0 * 0.1184);
        for v in &exit.data {
            assert!((v - expected).norm() < 1e-9);
        }
        let holo = record_hologram(&exit, &cfg());
        assert!(holo.data.iter().all(|&i| (i - 1.0).abs() < 1e-10));
    }

    #[test]
    fn uniform_slab_adds_contrast_phase() {
        let nz = 64;
        let dz = 0.1184;
        let grid = GridSpec::new(16, 16, nz, 0.1725, 0.1725, dz).unwrap();
        let c = 0.26;
        let slab = RealVolume::from_data(grid, vec![c; grid.voxel_count()]).unwrap();
        let exit = bpm_exit_field(&slab, &cfg());
        let t = nz as f64 * dz;
        let expected = Complex64::from_polar(1.0, cfg().k_medium() * t + cfg().k0() * c * t);
        for v in &exit.data {
            let phase_err = (v / expected).arg().abs();
            assert!(phase_err < 1e-9, "phase error {phase_err}");
        }

        // sign flip of the contrast flips the screen phase
        let slab_neg = RealVolume::from_data(grid, vec![-c; grid.voxel_count()]).unwrap();
        let exit_neg = bpm_exit_field(&slab_neg, &cfg());
        let ratio = (exit.data[0] / exit_neg.data[0]).arg();
        let want = 2.0 * cfg().k0() * c * t;
        let want_wrapped = (want + PI).rem_euclid(2.0 * PI) - PI;
        assert!((ratio - want_wrapped).abs() < 1e-9);
    }

    #[test]
    fn bpm_composes_over_volume_splits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = GridSpec::new(24, 24, 12, 0.1725, 0.1725, 0.1184).unwrap();
        let mut vol = RealVolume::zeros(grid);
        for v in vol.data.iter_mut() {
            if rng.gen::<f64>() < 0.05 {
                *v = 0.26;
            }
        }
        let whole = bpm_exit_field(&vol, &cfg());
        for split in [1, 5, 11] {
            let g1 = GridSpec::new(24, 24, split, 0.1725, 0.1725, 0.1184).unwrap();
            let g2 = GridSpec::new(24, 24, 12 - split, 0.1725, 0.1725, 0.1184).unwrap();
            let plane = 24 * 24;
            let lower = RealVolume::from_data(g1, vol.data[..split * plane].to_vec()).unwrap();
            let upper = RealVolume::from_data(g2, vol.data[split * plane..].to_vec()).unwrap();
            let mid = bpm_exit_field(&lower, &cfg());
            let exit = bpm_propagate(&mid, &upper, &cfg());
            assert!(rel_l2(&exit.data, &whole.data) < 1e-10);
        }
    }

    #[test]
    fn streamed_slices_match_materialized_volume() {
        let field = ParticleField {
            particles: vec![crate::particles::Particle {
                x: 2.0,
                y: 2.2,
                z: 1.4,
                d: 1.0,
                dn: 0.05,
            }],
            dims: [4.1, 4.1, 2.8],
            density_per_ul: 0.0,
            min_dist: 2.0,
            seed: 0,
        };
        let grid = GridSpec::new(24, 24, 24, 0.1725, 0.1725, 0.1184).unwrap();
        let vol = crate::voxelize::voxelize(&field, &grid);
        let direct = bpm_exit_field(&vol, &cfg());
        let streamed = bpm_exit_field(&FieldSlices { field: &field, grid }, &cfg());
        assert_eq!(direct.data, streamed.data);
    }

    #[test]
    fn hologram_is_nonnegative_and_noise_is_seeded() {
        let f = random_band_limited(16, 16, 0.1725, 0.1725, 2);
        let mut h = record_hologram(&f, &cfg());
        assert!(h.data.iter().all(|&v| v >= 0.0));
        let mut h2 = h.clone();
        apply_noise(&mut h, NoiseModel::Gaussian { sigma: 0.01 }, 77);
        apply_noise(&mut h2, NoiseModel::Gaussian { sigma: 0.01 }, 77);
        assert_eq!(h.data, h2.data);
        assert!(h.data.iter().all(|&v| v >= 0.0));
    }
}
