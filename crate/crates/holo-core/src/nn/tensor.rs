//! Dense channel-major tensors: shape (c, d, h, w), x fastest.

use super::Scalar;
use crate::volume::RealVolume;
use crate::{Error, GridSpec, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(c: usize, d: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            d,
            h,
            w,
            data: vec![T::zero(); c * d * h * w],
        }
    }

    pub fn from_data(c: usize, d: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != c * d * h * w {
            return Err(Error::Shape(format!(
                "tensor data length {} != {c}x{d}x{h}x{w}",
                data.len()
            )));
        }
        Ok(Self { c, d, h, w, data })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.d, self.h, self.w]
    }

    /// Voxels per channel.
    pub fn plane(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    /// Single-channel tensor from a real volume; (z, y, x) maps to (d, h, w).
    pub fn from_volume(v: &RealVolume) -> Self {
        Self {
            c: 1,
            d: v.grid.nz,
            h: v.grid.ny,
            w: v.grid.nx,
            data: v.data.iter().map(|&x| T::from_f64_c(x)).collect(),
        }
    }

    /// Single-channel tensor back to a real volume on the given grid.
    pub fn into_volume(&self, grid: GridSpec) -> Result<RealVolume> {
        if self.c != 1 || self.d != grid.nz || self.h != grid.ny || self.w != grid.nx {
            return Err(Error::Shape(format!(
                "tensor {}x{}x{}x{} does not match grid {}x{}x{}",
                self.c, self.d, self.h, self.w, grid.nx, grid.ny, grid.nz
            )));
        }
        RealVolume::from_data(grid, self.data.iter().map(|v| v.to_f64_c()).collect())
    }

    pub fn map<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            c: self.c,
            d: self.d,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::from_f64_c(v.to_f64_c())).collect(),
        }
    }
}

/// Elementwise a + b.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.data.len() != b.data.len() || a.spatial() != b.spatial() || a.c != b.c {
        return Err(Error::Shape("add: tensor shapes differ".into()));
    }
    let mut out = a.clone();
    for (o, &v) in out.data.iter_mut().zip(b.data.iter()) {
        *o = *o + v;
    }
    Ok(out)
}

/// out += alpha * src (same shape).
pub fn axpy<T: Scalar>(out: &mut Tensor<T>, alpha: T, src: &Tensor<T>) {
    debug_assert_eq!(out.data.len(), src.data.len());
    for (o, &v) in out.data.iter_mut().zip(src.data.iter()) {
        *o = *o + alpha * v;
    }
}

/// Flat dot product of two same-shape tensors.
pub fn dot<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> T {
    debug_assert_eq!(a.data.len(), b.data.len());
    a.data
        .iter()
        .zip(b.data.iter())
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
