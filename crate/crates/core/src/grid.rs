//! Row-major 2D containers. Rows run along the phase-encoding (y) axis and
//! columns along the readout (x) axis.

use num_complex::Complex;

use crate::error::{ForgeError, Result};
use crate::num::Real;

/// Real-valued 2D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Grid2<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(ForgeError::invalid("grid dimensions must be nonzero"));
        }
        if data.len() != rows * cols {
            return Err(ForgeError::invalid(format!(
                "grid {}x{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        assert!(rows > 0 && cols > 0, "grid dimensions must be nonzero");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(rows > 0 && cols > 0, "grid dimensions must be nonzero");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn ensure_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(ForgeError::DimMismatch {
                expected: dims,
                got: self.dims(),
            });
        }
        Ok(())
    }

    /// Converts to another precision.
    pub fn cast<U: Real>(&self) -> Grid2<U> {
        Grid2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Whether a complex grid holds image samples or k-space samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Image,
    KSpace,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Image => "image",
            Domain::KSpace => "kspace",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "image" => Some(Domain::Image),
            "kspace" => Some(Domain::KSpace),
            _ => None,
        }
    }
}

/// Complex 2D grid tagged with its domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage<T> {
    rows: usize,
    cols: usize,
    domain: Domain,
    data: Vec<Complex<T>>,
}

impl<T: Real> ComplexImage<T> {
    pub fn new(rows: usize, cols: usize, domain: Domain, data: Vec<Complex<T>>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(ForgeError::invalid("image dimensions must be nonzero"));
        }
        if data.len() != rows * cols {
            return Err(ForgeError::invalid(format!(
                "image {}x{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            domain,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, domain: Domain) -> Self {
        assert!(rows > 0 && cols > 0, "image dimensions must be nonzero");
        Self {
            rows,
            cols,
            domain,
            data: vec![Complex::new(T::zero(), T::zero()); rows * cols],
        }
    }

    pub fn from_real(grid: &Grid2<T>, domain: Domain) -> Self {
        Self {
            rows: grid.rows(),
            cols: grid.cols(),
            domain,
            data: grid.data().iter().map(|&v| Complex::new(v, T::zero())).collect(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn domain(&self) -> Domain {
        self.domain
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex<T> {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex<T>) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn magnitude(&self) -> Grid2<T> {
        Grid2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.norm()).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().map(|z| z.norm()).fold(T::zero(), T::max)
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> T {
        self.data.iter().fold(T::zero(), |a, z| a + z.norm_sqr())
    }

    pub fn scale(&mut self, s: T) {
        for z in &mut self.data {
            *z = *z * s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn ensure_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(ForgeError::DimMismatch {
                expected: dims,
                got: self.dims(),
            });
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ComplexImage<U> {
        ComplexImage {
            rows: self.rows,
            cols: self.cols,
            domain: self.domain,
            data: self
                .data
                .iter()
                .map(|z| Complex::new(U::lit(z.re.as_f64()), U::lit(z.im.as_f64())))
                .collect(),
        }
    }
}
