//! Linear MRI operators and the composed forward models that produce
//! training pairs.

use num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use crate::bloch::{simulate, KSpaceData, SimConfig};
use crate::error::{ForgeError, Result};
use crate::fields::{add_noise_stream, gen_velocity_field, B1Map, MotionSpec, NonIdealSet};
use crate::grid::{ComplexImage, Domain, Grid2};
use crate::num::{from_usize, Real};
use crate::phantom::ParametricTemplateSet;
use crate::rng::{self, StreamTag};
use crate::sequence::SequenceProgram;

fn expect_domain<T: Real>(x: &ComplexImage<T>, d: Domain) -> Result<()> {
    if x.domain() != d {
        return Err(ForgeError::DomainTagMismatch {
            expected: d.as_str(),
            got: x.domain().as_str(),
        });
    }
    Ok(())
}

/// Circular shift so that index `i` moves to `(i + shift) % n` along both axes.
fn roll<T: Real>(data: &[Complex<T>], rows: usize, cols: usize, sr: usize, sc: usize) -> Vec<Complex<T>> {
    let mut out = vec![Complex::new(T::zero(), T::zero()); data.len()];
    for r in 0..rows {
        let rr = (r + sr) % rows;
        for c in 0..cols {
            out[rr * cols + (c + sc) % cols] = data[r * cols + c];
        }
    }
    out
}

fn fft2_inplace<T: Real>(data: &mut [Complex<T>], rows: usize, cols: usize, dir: FftDirection) {
    let mut planner = FftPlanner::<T>::new();
    let row_fft = planner.plan_fft(cols, dir);
    for row in data.chunks_exact_mut(cols) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft(rows, dir);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); rows];
    for c in 0..cols {
        for r in 0..rows {
            buf[r] = data[r * cols + c];
        }
        col_fft.process(&mut buf);
        for r in 0..rows {
            data[r * cols + c] = buf[r];
        }
    }
}

fn centered<T: Real>(x: &ComplexImage<T>, dir: FftDirection, out_domain: Domain) -> ComplexImage<T> {
    let (rows, cols) = x.dims();
    // ifftshift, transform, fftshift.
    let mut d = roll(x.data(), rows, cols, rows - rows / 2, cols - cols / 2);
    fft2_inplace(&mut d, rows, cols, dir);
    let mut d = roll(&d, rows, cols, rows / 2, cols / 2);
    let s = T::one() / from_usize::<T>(rows * cols).sqrt();
    for z in &mut d {
        *z = *z * s;
    }
    ComplexImage::new(rows, cols, out_domain, d).expect("dims preserved")
}

/// Centered orthonormal 2D DFT, image to k-space.
pub fn fft2c<T: Real>(img: &ComplexImage<T>) -> Result<ComplexImage<T>> {
    expect_domain(img, Domain::Image)?;
    Ok(centered(img, FftDirection::Forward, Domain::KSpace))
}

/// Centered orthonormal inverse 2D DFT, k-space to image.
pub fn ifft2c<T: Real>(ksp: &ComplexImage<T>) -> Result<ComplexImage<T>> {
    expect_domain(ksp, Domain::KSpace)?;
    Ok(centered(ksp, FftDirection::Inverse, Domain::Image))
}

/// Image in M0 units from simulated k-space.
///
/// The simulator averages over spins, which is the unnormalized DFT divided
/// by the pixel count, so the orthonormal inverse is rescaled by
/// `sqrt(rows * cols)`.
pub fn reconstruct_image<T: Real>(k: &KSpaceData<T>) -> Result<ComplexImage<T>> {
    let mut img = ifft2c(&k.data)?;
    let (r, c) = img.dims();
    img.scale(from_usize::<T>(r * c).sqrt());
    Ok(img)
}

/// Receive sensitivity maps.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSet<T> {
    maps: Vec<ComplexImage<T>>,
}

impl<T: Real> CoilSet<T> {
    pub fn new(maps: Vec<ComplexImage<T>>) -> Result<Self> {
        let first = maps.first().ok_or(ForgeError::EmptyPool("coil maps"))?;
        let dims = first.dims();
        for m in &maps {
            m.ensure_dims(dims)?;
            expect_domain(m, Domain::Image)?;
            if !m.is_finite() {
                return Err(ForgeError::invalid("coil maps must be finite"));
            }
        }
        Ok(Self { maps })
    }

    pub fn maps(&self) -> &[ComplexImage<T>] {
        &self.maps
    }

    pub fn num_coils(&self) -> usize {
        self.maps.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.maps[0].dims()
    }

    /// Pointwise root-sum-of-squares of the maps.
    pub fn rss(&self) -> Grid2<T> {
        coil_combine_rss(&self.maps).expect("nonempty")
    }
}

/// Synthetic coil array: `num_coils` Gaussian lobes centered on a circle
/// around the FOV, each with a smooth linear phase ramp, scaled pointwise so
/// that the root-sum-of-squares is one everywhere.
pub fn analytic_coils<T: Real>(num_coils: usize, n: usize, seed: u64, index: u64) -> Result<CoilSet<T>> {
    if num_coils == 0 {
        return Err(ForgeError::EmptyPool("coil maps"));
    }
    let mut r = rng::stream(seed, index, StreamTag::CoilGeometry);
    let rot = rng::uniform(&mut r, 0.0, std::f64::consts::TAU);
    let radius = rng::uniform(&mut r, 1.1, 1.5);
    let width = rng::uniform(&mut r, 0.6, 1.0);
    let mut raw: Vec<Vec<Complex<f64>>> = Vec::with_capacity(num_coils);
    for k in 0..num_coils {
        let th = rot + std::f64::consts::TAU * k as f64 / num_coils as f64;
        let (cx, cy) = (radius * th.cos(), radius * th.sin());
        let (px, py, p0) = (
            rng::uniform(&mut r, -1.0, 1.0),
            rng::uniform(&mut r, -1.0, 1.0),
            rng::uniform(&mut r, -std::f64::consts::PI, std::f64::consts::PI),
        );
        let mut m = Vec::with_capacity(n * n);
        for row in 0..n {
            let y = (2.0 * row as f64 + 1.0) / n as f64 - 1.0;
            for col in 0..n {
                let x = (2.0 * col as f64 + 1.0) / n as f64 - 1.0;
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp();
                m.push(Complex::from_polar(mag, p0 + px * x + py * y));
            }
        }
        raw.push(m);
    }
    let mut maps = Vec::with_capacity(num_coils);
    let rss: Vec<f64> = (0..n * n)
        .map(|i| raw.iter().map(|m| m[i].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    for m in raw {
        let data = m
            .iter()
            .zip(&rss)
            .map(|(z, s)| Complex::new(T::lit(z.re / s), T::lit(z.im / s)))
            .collect();
        maps.push(ComplexImage::new(n, n, Domain::Image, data)?);
    }
    CoilSet::new(maps)
}

/// `maps_i * img` for every coil.
pub fn apply_coils<T: Real>(img: &ComplexImage<T>, coils: &CoilSet<T>) -> Result<Vec<ComplexImage<T>>> {
    expect_domain(img, Domain::Image)?;
    img.ensure_dims(coils.dims())?;
    Ok(coils
        .maps()
        .iter()
        .map(|m| {
            let d = m.data().iter().zip(img.data()).map(|(a, b)| a * b).collect();
            ComplexImage::new(img.rows(), img.cols(), Domain::Image, d).expect("dims checked")
        })
        .collect())
}

/// Uniform line mask: phase-encoding line `l` is acquired iff
/// `l % r == offset`. No extra central lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    lines: Vec<bool>,
    cols: usize,
    r: usize,
    offset: usize,
}

impl SamplingMask {
    pub fn uniform(rows: usize, cols: usize, r: usize, offset: usize) -> Result<Self> {
        if r == 0 || offset >= r || rows == 0 || cols == 0 {
            return Err(ForgeError::invalid(format!("bad mask: rows={rows} R={r} offset={offset}")));
        }
        if rows % r != 0 {
            return Err(ForgeError::invalid(format!("{rows} lines not divisible by R={r}")));
        }
        Ok(Self {
            lines: (0..rows).map(|l| l % r == offset).collect(),
            cols,
            r,
            offset,
        })
    }

    pub fn lines(&self) -> &[bool] {
        &self.lines
    }

    pub fn acceleration(&self) -> usize {
        self.r
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.lines.len(), self.cols)
    }

    pub fn acquired(&self) -> usize {
        self.lines.iter().filter(|&&b| b).count()
    }

    /// Per-sample 0/1 matrix.
    pub fn expand<T: Real>(&self) -> Grid2<T> {
        Grid2::from_fn(self.lines.len(), self.cols, |r, _| if self.lines[r] { T::one() } else { T::zero() })
    }
}

/// Zeroes non-acquired lines.
pub fn apply_mask<T: Real>(ksp: &ComplexImage<T>, mask: &SamplingMask) -> Result<ComplexImage<T>> {
    expect_domain(ksp, Domain::KSpace)?;
    ksp.ensure_dims(mask.dims())?;
    let mut out = ksp.clone();
    let cols = ksp.cols();
    for (r, &keep) in mask.lines().iter().enumerate() {
        if !keep {
            for z in &mut out.data_mut()[r * cols..(r + 1) * cols] {
                *z = Complex::new(T::zero(), T::zero());
            }
        }
    }
    Ok(out)
}

/// 2x2 block mean.
pub fn downsample_u<T: Real>(g: &Grid2<T>) -> Result<Grid2<T>> {
    let (rows, cols) = g.dims();
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(ForgeError::DimMismatch {
            expected: (rows + rows % 2, cols + cols % 2),
            got: (rows, cols),
        });
    }
    let q = T::lit(0.25);
    Ok(Grid2::from_fn(rows / 2, cols / 2, |r, c| {
        let (r2, c2) = (2 * r, 2 * c);
        (g.get(r2, c2) + g.get(r2, c2 + 1) + g.get(r2 + 1, c2) + g.get(r2 + 1, c2 + 1)) * q
    }))
}

/// Repeated [`downsample_u`] until the grid is `size x size`.
pub fn downsample_to<T: Real>(g: &Grid2<T>, size: usize) -> Result<Grid2<T>> {
    let mut out = g.clone();
    while out.rows() > size {
        out = downsample_u(&out)?;
    }
    out.ensure_dims((size, size))?;
    Ok(out)
}

/// Symmetric zero padding of k-space keeping the center sample centered.
pub fn pad_kspace<T: Real>(ksp: &ComplexImage<T>, rows: usize, cols: usize) -> Result<ComplexImage<T>> {
    expect_domain(ksp, Domain::KSpace)?;
    let (sr, sc) = ksp.dims();
    if rows < sr || cols < sc {
        return Err(ForgeError::invalid(format!("cannot pad {sr}x{sc} down to {rows}x{cols}")));
    }
    let (or, oc) = (rows / 2 - sr / 2, cols / 2 - sc / 2);
    let mut out = ComplexImage::zeros(rows, cols, Domain::KSpace);
    for r in 0..sr {
        for c in 0..sc {
            out.set(r + or, c + oc, ksp.get(r, c));
        }
    }
    Ok(out)
}

/// Zero-pads k-space, transforms to image space and scales to unit peak.
pub fn zero_pad_kspace<T: Real>(ksp: &ComplexImage<T>, rows: usize, cols: usize) -> Result<ComplexImage<T>> {
    let mut img = ifft2c(&pad_kspace(ksp, rows, cols)?)?;
    let peak = img.max_abs();
    if peak > T::zero() {
        img.scale(T::one() / peak);
    }
    Ok(img)
}

/// Pointwise `sqrt(sum_i |x_i|^2)`.
pub fn coil_combine_rss<T: Real>(coils: &[ComplexImage<T>]) -> Result<Grid2<T>> {
    let first = coils.first().ok_or(ForgeError::EmptyPool("coil images"))?;
    let dims = first.dims();
    let mut acc = vec![T::zero(); dims.0 * dims.1];
    for x in coils {
        x.ensure_dims(dims)?;
        for (a, z) in acc.iter_mut().zip(x.data()) {
            *a = *a + z.norm_sqr();
        }
    }
    Grid2::new(dims.0, dims.1, acc.into_iter().map(|v| v.sqrt()).collect())
}

/// Which dataset a pair belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum DatasetKind {
    /// Parallel-imaging reconstruction pairs.
    Dp,
    /// Motion-corrected T2 mapping pairs.
    Dm,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Dp => "Dp",
            DatasetKind::Dm => "Dm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Dp" | "dp" => Some(DatasetKind::Dp),
            "Dm" | "dm" => Some(DatasetKind::Dm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelKind {
    T2,
    VelocityRo,
    VelocityPe,
    B1,
    FullySampledCoils,
}

impl LabelKind {
    /// File stem used when the label is written to disk.
    pub fn file_stem(self) -> &'static str {
        match self {
            LabelKind::T2 => "label_t2",
            LabelKind::VelocityRo => "label_vro",
            LabelKind::VelocityPe => "label_vpe",
            LabelKind::B1 => "label_b1",
            LabelKind::FullySampledCoils => "label_coils",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelData<T> {
    Real(Grid2<T>),
    Coils(Vec<ComplexImage<T>>),
}

/// One training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair<T> {
    pub kind: DatasetKind,
    /// One image per coil for D_p; a single image for D_m.
    pub input: Vec<ComplexImage<T>>,
    pub labels: Vec<(LabelKind, LabelData<T>)>,
}

impl<T: Real> SamplePair<T> {
    pub fn label(&self, kind: LabelKind) -> Option<&LabelData<T>> {
        self.labels.iter().find(|(k, _)| *k == kind).map(|(_, d)| d)
    }
}

/// Zero-filled under-sampled multi-coil images and their fully sampled
/// counterparts. Motion is ignored; B1 and gradient fluctuation are applied.
/// Noise is added after masking, independently to input and label.
pub fn forward_parallel_pair<T: Real>(
    templates: &ParametricTemplateSet<T>,
    coils: &CoilSet<T>,
    mask: &SamplingMask,
    nonideals: &NonIdealSet<T>,
    program: &SequenceProgram,
    cfg: &SimConfig,
) -> Result<SamplePair<T>> {
    let mut still = nonideals.clone();
    still.motion = MotionSpec::disabled();
    let img = reconstruct_image(&simulate(program, templates, &still, cfg)?)?;
    forward_parallel_from_image(&img, coils, mask, nonideals)
}

/// The coil, mask and noise part of [`forward_parallel_pair`].
pub fn forward_parallel_from_image<T: Real>(
    img: &ComplexImage<T>,
    coils: &CoilSet<T>,
    mask: &SamplingMask,
    nonideals: &NonIdealSet<T>,
) -> Result<SamplePair<T>> {
    let clean = apply_coils(img, coils)?;
    let mut input = Vec::with_capacity(clean.len());
    let mut label = Vec::with_capacity(clean.len());
    for (i, x) in clean.iter().enumerate() {
        let under = ifft2c(&apply_mask(&fft2c(x)?, mask)?)?;
        input.push(add_noise_stream(&under, &nonideals.noise, 2 * i as u64));
        label.push(add_noise_stream(x, &nonideals.noise, 2 * i as u64 + 1));
    }
    Ok(SamplePair {
        kind: DatasetKind::Dp,
        input,
        labels: vec![(LabelKind::FullySampledCoils, LabelData::Coils(label))],
    })
}

/// Output sizes of the motion forward model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotionPairSizes {
    /// Edge of the down-sampled label maps.
    pub label: usize,
    /// Edge of the zero-padded input image.
    pub pad: usize,
}

/// Motion-corrupted overlapping-echo image and its parametric labels.
///
/// Noise is added to the acquisition-resolution image before zero padding.
pub fn forward_motion_pair<T: Real>(
    templates: &ParametricTemplateSet<T>,
    nonideals: &NonIdealSet<T>,
    program: &SequenceProgram,
    sizes: MotionPairSizes,
    cfg: &SimConfig,
) -> Result<SamplePair<T>> {
    let k = simulate(program, templates, nonideals, cfg)?;
    let img = reconstruct_image(&k)?;
    let noisy = crate::fields::add_noise(&img, &nonideals.noise);
    let input = zero_pad_kspace(&fft2c(&noisy)?, sizes.pad, sizes.pad)?;

    let (n, _) = templates.dims();
    let fov = program.meta().fov_cm;
    let vel = gen_velocity_field::<T>(&nonideals.motion, n, n, fov)?;
    let b1 = nonideals.b1.clone().unwrap_or_else(|| B1Map::uniform(n, n, 1.0));
    let labels = vec![
        (LabelKind::T2, LabelData::Real(downsample_to(templates.t2().data(), sizes.label)?)),
        (LabelKind::VelocityRo, LabelData::Real(downsample_to(&vel.v_ro, sizes.label)?)),
        (LabelKind::VelocityPe, LabelData::Real(downsample_to(&vel.v_pe, sizes.label)?)),
        (LabelKind::B1, LabelData::Real(downsample_to(b1.data(), sizes.label)?)),
    ];
    Ok(SamplePair {
        kind: DatasetKind::Dm,
        input: vec![input],
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(rows: usize, cols: usize, seed: u64, domain: Domain) -> ComplexImage<f64> {
        let mut r = rng::stream(seed, 0, StreamTag::Noise);
        let d = (0..rows * cols)
            .map(|_| Complex::new(rng::standard_normal(&mut r), rng::standard_normal(&mut r)))
            .collect();
        ComplexImage::new(rows, cols, domain, d).unwrap()
    }

    fn inner(a: &ComplexImage<f64>, b: &ComplexImage<f64>) -> Complex<f64> {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y.conj()).sum()
    }

    #[test]
    fn impulse_gives_flat_kspace() {
        let mut img = ComplexImage::<f64>::zeros(8, 8, Domain::Image);
        img.set(4, 4, Complex::new(1.0, 0.0));
        let k = fft2c(&img).unwrap();
        assert!(k.data().iter().all(|z| (z - Complex::new(0.125, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn round_trip_and_parseval() {
        for (r, c) in [(8, 8), (6, 10), (7, 5)] {
            let x = random_image(r, c, 3, Domain::Image);
            let k = fft2c(&x).unwrap();
            assert!((k.energy() - x.energy()).abs() / x.energy() < 1e-12);
            let y = ifft2c(&k).unwrap();
            let err: f64 = y.data().iter().zip(x.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
            assert!(err.sqrt() / x.energy().sqrt() < 1e-12);
        }
    }

    #[test]
    fn adjoint() {
        let x = random_image(12, 12, 1, Domain::Image);
        let y = random_image(12, 12, 2, Domain::KSpace);
        let lhs = inner(&fft2c(&x).unwrap(), &y);
        let rhs = inner(&x, &ifft2c(&y).unwrap());
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn domain_tags_enforced() {
        let x = random_image(4, 4, 1, Domain::Image);
        assert!(matches!(ifft2c(&x), Err(ForgeError::DomainTagMismatch { .. })));
        let m = SamplingMask::uniform(4, 4, 2, 0).unwrap();
        assert!(apply_mask(&x, &m).is_err());
    }

    #[test]
    fn mask_behaviour() {
        let k = random_image(128, 8, 5, Domain::KSpace);
        let m1 = SamplingMask::uniform(128, 8, 1, 0).unwrap();
        assert_eq!(apply_mask(&k, &m1).unwrap(), k);
        let m2 = SamplingMask::uniform(128, 8, 2, 0).unwrap();
        let once = apply_mask(&k, &m2).unwrap();
        assert_eq!(apply_mask(&once, &m2).unwrap(), once);
        let nonzero = (0..128).filter(|&r| (0..8).any(|c| once.get(r, c).norm() > 0.0)).count();
        assert_eq!(nonzero, 64);
        assert!(once.get(0, 0).norm() > 0.0 && once.get(1, 0).norm() == 0.0);
    }

    #[test]
    fn coil_energy_identity() {
        let coils = analytic_coils::<f64>(4, 16, 1, 0).unwrap();
        let rss = coils.rss();
        assert!(rss.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let x = random_image(16, 16, 9, Domain::Image);
        let out = apply_coils(&x, &coils).unwrap();
        for i in 0..256 {
            let e: f64 = out.iter().map(|o| o.data()[i].norm_sqr()).sum();
            let m: f64 = coils.maps().iter().map(|m| m.data()[i].norm_sqr()).sum();
            assert!((e - m * x.data()[i].norm_sqr()).abs() < 1e-12);
        }
    }

    #[test]
    fn downsample_identities() {
        let g = Grid2::from_fn(4, 4, |r, c| ((r + c) % 2) as f64);
        assert!(downsample_u(&g).unwrap().data().iter().all(|&v| v == 0.5));
        let h = Grid2::from_fn(6, 8, |r, c| (r * 8 + c) as f64 * 0.37);
        let d = downsample_u(&h).unwrap();
        assert!((d.sum() * 4.0 - h.sum()).abs() < 1e-9);
        assert!(downsample_u(&Grid2::filled(3, 4, 1.0)).is_err());
    }

    #[test]
    fn padding() {
        let k = random_image(8, 8, 4, Domain::KSpace);
        let p = pad_kspace(&k, 16, 16).unwrap();
        assert!((p.energy() - k.energy()).abs() < 1e-12);
        assert_eq!(p.get(8, 8), k.get(4, 4));
        let img = zero_pad_kspace(&k, 16, 16).unwrap();
        assert!((img.max_abs() - 1.0).abs() < 1e-15);
        let same = zero_pad_kspace(&k, 8, 8).unwrap();
        let mut direct = ifft2c(&k).unwrap();
        direct.scale(1.0 / direct.max_abs());
        assert_eq!(same, direct);
    }

    #[test]
    fn rss_properties() {
        let x = random_image(4, 4, 6, Domain::Image);
        let single = coil_combine_rss(std::slice::from_ref(&x)).unwrap();
        for (a, b) in single.data().iter().zip(x.magnitude().data()) {
            assert!((a - b).abs() <= 1e-15 * b.max(1.0));
        }
        let dup = coil_combine_rss(&[x.clone(), x.clone()]).unwrap();
        for (a, b) in dup.data().iter().zip(single.data()) {
            assert!((a - 2f64.sqrt() * b).abs() < 1e-12);
        }
        let mut rotated = x.clone();
        for z in rotated.data_mut() {
            *z = *z * Complex::from_polar(1.0, 0.7);
        }
        let r = coil_combine_rss(&[rotated]).unwrap();
        for (a, b) in r.data().iter().zip(single.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
