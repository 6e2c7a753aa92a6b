//! Image-quality and regression metrics.

use crate::error::{ForgeError, Result};
use crate::grid::{ComplexImage, Grid2};
use crate::num::Real;

fn nrmse_from(diff2: f64, ref2: f64) -> Result<f64> {
    if ref2 == 0.0 {
        return Err(ForgeError::ZeroReference);
    }
    Ok(100.0 * (diff2 / ref2).sqrt())
}

/// `||x - ref|| / ||ref||` in percent.
pub fn nrmse<T: Real>(x: &Grid2<T>, reference: &Grid2<T>) -> Result<f64> {
    x.ensure_dims(reference.dims())?;
    let (mut d, mut r) = (0.0, 0.0);
    for (a, b) in x.data().iter().zip(reference.data()) {
        let (a, b) = (a.as_f64(), b.as_f64());
        d += (a - b) * (a - b);
        r += b * b;
    }
    nrmse_from(d, r)
}

/// [`nrmse`] for complex data.
pub fn nrmse_complex<T: Real>(x: &ComplexImage<T>, reference: &ComplexImage<T>) -> Result<f64> {
    x.ensure_dims(reference.dims())?;
    let (mut d, mut r) = (0.0, 0.0);
    for (a, b) in x.data().iter().zip(reference.data()) {
        d += (a - b).norm_sqr().as_f64();
        r += b.norm_sqr().as_f64();
    }
    nrmse_from(d, r)
}

/// Axis-aligned rectangle of pixels; coordinates wrap around the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Roi {
    pub fn new(row: usize, col: usize, height: usize, width: usize) -> Self {
        Self { row, col, height, width }
    }

    /// Centered square covering `frac` of each dimension.
    pub fn centered(rows: usize, cols: usize, frac: f64) -> Self {
        let h = ((rows as f64 * frac).round() as usize).max(1);
        let w = ((cols as f64 * frac).round() as usize).max(1);
        Self::new((rows - h) / 2, (cols - w) / 2, h, w)
    }

    /// The same rectangle moved by half the FOV along phase encoding.
    pub fn ghost_of(&self, rows: usize) -> Self {
        Self {
            row: (self.row + rows / 2) % rows,
            ..*self
        }
    }

    pub fn pixels(&self, rows: usize, cols: usize) -> Vec<(usize, usize)> {
        let mut v = Vec::with_capacity(self.height * self.width);
        for dr in 0..self.height {
            for dc in 0..self.width {
                v.push(((self.row + dr) % rows, (self.col + dc) % cols));
            }
        }
        v
    }
}

/// Mean of `|img|` over the ghost region divided by the mean over the signal
/// region. The ghost region defaults to the signal region shifted by FOV/2
/// along phase encoding.
pub fn gsr<T: Real>(magnitude: &Grid2<T>, signal: &Roi, ghost: Option<&Roi>) -> Result<f64> {
    let (rows, cols) = magnitude.dims();
    let ghost = ghost.copied().unwrap_or_else(|| signal.ghost_of(rows));
    let sp = signal.pixels(rows, cols);
    let gp = ghost.pixels(rows, cols);
    if sp.is_empty() || gp.is_empty() {
        return Err(ForgeError::EmptyRoi);
    }
    let set: std::collections::HashSet<_> = sp.iter().collect();
    if gp.iter().any(|p| set.contains(p)) {
        return Err(ForgeError::invalid("signal and ghost regions overlap"));
    }
    let mean = |px: &[(usize, usize)]| px.iter().map(|&(r, c)| magnitude.get(r, c).as_f64().abs()).sum::<f64>() / px.len() as f64;
    let s = mean(&sp);
    if s == 0.0 {
        return Err(ForgeError::ZeroReference);
    }
    Ok(mean(&gp) / s)
}

/// [`gsr`] on the magnitude of a complex image.
pub fn gsr_complex<T: Real>(img: &ComplexImage<T>, signal: &Roi, ghost: Option<&Roi>) -> Result<f64> {
    gsr(&img.magnitude(), signal, ghost)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinReg {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn linreg(x: &[f64], y: &[f64]) -> Result<LinReg> {
    if x.len() != y.len() {
        return Err(ForgeError::DegenerateInput(format!("{} x values vs {} y values", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(ForgeError::DegenerateInput("need at least 3 points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(ForgeError::DegenerateInput("non-finite value".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(ForgeError::DegenerateInput("x has zero variance".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    Ok(LinReg { slope, intercept, r2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, StreamTag};

    #[test]
    fn nrmse_cases() {
        let r = Grid2::from_fn(4, 4, |a, b| (a * 4 + b) as f64 + 1.0);
        assert_eq!(nrmse(&r, &r).unwrap(), 0.0);
        assert!((nrmse(&r.map(|v| v * 1.01), &r).unwrap() - 1.0).abs() < 1e-9);
        // ||ref|| = 100 and a unit impulse error.
        let r = Grid2::filled(4, 4, 25.0);
        let mut x = r.clone();
        x.set(0, 0, 26.0);
        assert!((nrmse(&x, &r).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(nrmse(&r, &Grid2::filled(4, 4, 0.0)), Err(ForgeError::ZeroReference)));
    }

    #[test]
    fn gsr_cases() {
        let mut g = Grid2::filled(8, 8, 0.0);
        let roi = Roi::new(1, 2, 2, 3);
        for (r, c) in roi.pixels(8, 8) {
            g.set(r, c, 2.0);
        }
        assert_eq!(gsr(&g, &roi, None).unwrap(), 0.0);
        for (r, c) in roi.ghost_of(8).pixels(8, 8) {
            g.set(r, c, 1.0);
        }
        assert_eq!(gsr(&g, &roi, None).unwrap(), 0.5);
        assert_eq!(gsr(&g.map(|v| v * 7.0), &roi, None).unwrap(), 0.5);
        assert!(matches!(gsr(&g, &Roi::new(0, 0, 0, 3), None), Err(ForgeError::EmptyRoi)));
    }

    #[test]
    fn linreg_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let l = linreg(&x, &x).unwrap();
        assert!((l.slope - 1.0).abs() < 1e-12 && l.intercept.abs() < 1e-12 && (l.r2 - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        let l = linreg(&x, &y).unwrap();
        assert!((l.slope - 2.0).abs() < 1e-12 && (l.intercept - 3.0).abs() < 1e-12 && (l.r2 - 1.0).abs() < 1e-12);
        assert!(linreg(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(linreg(&[1.0, 2.0], &[1.0, 2.0]).is_err());

        let mut r = rng::stream(1, 0, StreamTag::Noise);
        let xs: Vec<f64> = (0..1000).map(|_| rng::standard_normal(&mut r)).collect();
        let ys: Vec<f64> = (0..1000).map(|_| rng::standard_normal(&mut r)).collect();
        assert!(linreg(&xs, &ys).unwrap().r2 < 0.1);
    }
}
