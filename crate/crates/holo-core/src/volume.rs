//! Dense volume and hologram containers.
//!
//! Voxel data is stored x-fastest, then y, then z. On disk every payload is
//! little-endian IEEE-754 float32 (or u8 for binary masks); in memory f64 is
//! used for numerical headroom.

use crate::grid::GridSpec;
use crate::{Error, Result};
use num_complex::Complex64;

/// Real-valued scalar field on a grid (refractive-index contrast, amplitudes,
/// probabilities).
#[derive(Debug, Clone, PartialEq)]
pub struct RealVolume {
    pub grid: GridSpec,
    pub data: Vec<f64>,
}

/// Complex-valued field on a grid (backpropagated volumes).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVolume {
    pub grid: GridSpec,
    pub data: Vec<Complex64>,
}

/// {0,1} label volume (ground truth).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryVolume {
    pub grid: GridSpec,
    pub data: Vec<u8>,
}

macro_rules! volume_common {
    ($ty:ident, $elem:ty, $zero:expr) => {
        impl $ty {
            pub fn zeros(grid: GridSpec) -> Self {
                Self {
                    data: vec![$zero; grid.voxel_count()],
                    grid,
                }
            }

            pub fn from_data(grid: GridSpec, data: Vec<$elem>) -> Result<Self> {
                if data.len() != grid.voxel_count() {
                    return Err(Error::Shape(format!(
                        "volume data length {} != {}x{}x{}",
                        data.len(),
                        grid.nx,
                        grid.ny,
                        grid.nz
                    )));
                }
                Ok(Self { grid, data })
            }

            #[inline]
            pub fn at(&self, ix: usize, iy: usize, iz: usize) -> $elem {
                self.data[self.grid.index(ix, iy, iz)]
            }

            #[inline]
            pub fn at_mut(&mut self, ix: usize, iy: usize, iz: usize) -> &mut $elem {
                let i = self.grid.index(ix, iy, iz);
                &mut self.data[i]
            }

            /// One z-slice as a flat x-fastest slice.
            pub fn slice(&self, iz: usize) -> &[$elem] {
                let n = self.grid.nx * self.grid.ny;
                &self.data[iz * n..(iz + 1) * n]
            }

            pub fn slice_mut(&mut self, iz: usize) -> &mut [$elem] {
                let n = self.grid.nx * self.grid.ny;
                &mut self.data[iz * n..(iz + 1) * n]
            }

            /// Reverse the slice order along z (geometry metadata unchanged).
            pub fn flip_z(&mut self) {
                let n = self.grid.nx * self.grid.ny;
                let nz = self.grid.nz;
                for iz in 0..nz / 2 {
                    let (a, b) = self.data.split_at_mut((nz - 1 - iz) * n);
                    a[iz * n..iz * n + n].swap_with_slice(&mut b[..n]);
                }
            }
        }
    };
}

volume_common!(RealVolume, f64, 0.0);
volume_common!(ComplexVolume, Complex64, Complex64::new(0.0, 0.0));
volume_common!(BinaryVolume, u8, 0u8);

impl ComplexVolume {
    /// Voxelwise amplitude.
    pub fn amplitude(&self) -> RealVolume {
        RealVolume {
            grid: self.grid,
            data: self.data.iter().map(|c| c.norm()).collect(),
        }
    }
}

impl BinaryVolume {
    pub fn validate(&self) -> Result<()> {
        if self.data.iter().any(|&v| v > 1) {
            return Err(Error::Invalid("binary volume values must be 0 or 1".into()));
        }
        Ok(())
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

/// A recorded 2D intensity pattern plus the acquisition metadata needed to
/// propagate it.
#[derive(Debug, Clone, PartialEq)]
pub struct Hologram {
    pub nx: usize,
    pub ny: usize,
    /// Pixel pitch in um.
    pub dx: f64,
    pub dy: f64,
    /// Vacuum wavelength in um.
    pub wavelength: f64,
    /// Refractive index of the immersion medium.
    pub n_medium: f64,
    /// Intensity samples, x-fastest; non-negative in raw form.
    pub data: Vec<f64>,
}

impl Hologram {
    pub fn new(
        nx: usize,
        ny: usize,
        dx: f64,
        dy: f64,
        wavelength: f64,
        n_medium: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::Shape(format!(
                "hologram data length {} != {}x{}",
                data.len(),
                nx,
                ny
            )));
        }
        if wavelength <= 0.0 || n_medium < 1.0 {
            return Err(Error::Invalid(
                "hologram needs wavelength > 0 and n_medium >= 1".into(),
            ));
        }
        Ok(Self {
            nx,
            ny,
            dx,
            dy,
            wavelength,
            n_medium,
            data,
        })
    }

    /// Lateral grid of the hologram as a one-slice volume grid.
    pub fn grid(&self) -> GridSpec {
        GridSpec::new(self.nx, self.ny, 1, self.dx, self.dy, 1.0).expect("valid hologram dims")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_data_checks_length() {
        let g = GridSpec::new(2, 2, 2, 1.0, 1.0, 1.0).unwrap();
        assert!(RealVolume::from_data(g, vec![0.0; 7]).is_err());
        assert!(RealVolume::from_data(g, vec![0.0; 8]).is_ok());
    }

    #[test]
    fn flip_z_reverses_slices() {
        let g = GridSpec::new(2, 1, 3, 1.0, 1.0, 1.0).unwrap();
        let mut v = RealVolume::from_data(g, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        v.flip_z();
        assert_eq!(v.data, vec![4.0, 5.0, 2.0, 3.0, 0.0, 1.0]);
        v.flip_z();
        assert_eq!(v.data, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn amplitude_takes_norm() {
        let g = GridSpec::new(1, 1, 1, 1.0, 1.0, 1.0).unwrap();
        let v = ComplexVolume::from_data(g, vec![Complex64::new(3.0, 4.0)]).unwrap();
        assert_eq!(v.amplitude().data, vec![5.0]);
    }
}
