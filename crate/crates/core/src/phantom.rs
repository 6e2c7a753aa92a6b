//! Quantitative parametric templates.
//!
//! Weighted images are turned into M0/T2 maps by inverting the steady-state
//! spin-echo signal model `S = M0 (1 - exp(-TR/T1)) exp(-TE/T2)`, then resampled
//! and augmented. Synthetic phantoms cover the cases where no registered
//! multi-contrast data is at hand.

use std::fmt;

use crate::error::{ForgeError, Result};
use crate::grid::Grid2;
use crate::num::{from_usize, Real};
use crate::rng::{self, StreamTag};

/// Upper clamp for synthesized T2 values, in ms.
pub const T2_MAX_MS: f64 = 650.0;
/// T1 assigned to every tissue, in ms.
pub const T1_FIXED_MS: f64 = 2000.0;
/// Template grid edge used for full-scale simulation.
pub const TEMPLATE_GRID: usize = 512;

/// A registered weighted image with the timing it was acquired with.
#[derive(Debug, Clone)]
pub struct WeightedImage<T> {
    data: Grid2<T>,
    te_ms: f64,
    tr_ms: f64,
}

impl<T: Real> WeightedImage<T> {
    pub fn new(data: Grid2<T>, te_ms: f64, tr_ms: f64) -> Result<Self> {
        if !(te_ms > 0.0 && te_ms.is_finite()) {
            return Err(ForgeError::invalid(format!("TE must be > 0, got {te_ms}")));
        }
        if !(tr_ms > 0.0 && tr_ms.is_finite()) {
            return Err(ForgeError::invalid(format!("TR must be > 0, got {tr_ms}")));
        }
        if data.data().iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(ForgeError::invalid("weighted image must be finite and non-negative"));
        }
        Ok(Self { data, te_ms, tr_ms })
    }

    pub fn data(&self) -> &Grid2<T> {
        &self.data
    }

    pub fn te_ms(&self) -> f64 {
        self.te_ms
    }

    pub fn tr_ms(&self) -> f64 {
        self.tr_ms
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    M0,
    T2,
    T1,
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MapKind::M0 => "M0",
            MapKind::T2 => "T2",
            MapKind::T1 => "T1",
        })
    }
}

/// A quantitative map whose values respect the bounds of its kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricMap<T> {
    kind: MapKind,
    data: Grid2<T>,
}

impl<T: Real> ParametricMap<T> {
    /// Validates the kind's bounds: M0 in [0,1], T2 in [0,650] ms, T1 > 0.
    pub fn new(kind: MapKind, data: Grid2<T>) -> Result<Self> {
        let t2_max = T::lit(T2_MAX_MS);
        let ok = |v: T| match kind {
            MapKind::M0 => v >= T::zero() && v <= T::one(),
            MapKind::T2 => v >= T::zero() && v <= t2_max,
            MapKind::T1 => v > T::zero() && !v.is_nan(),
        };
        if let Some(bad) = data.data().iter().copied().find(|&v| !ok(v)) {
            return Err(ForgeError::invalid(format!("{kind} map value {bad} out of bounds")));
        }
        Ok(Self { kind, data })
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn data(&self) -> &Grid2<T> {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dims()
    }

    pub fn into_grid(self) -> Grid2<T> {
        self.data
    }
}

/// M0 and T2 maps sharing one grid, plus the fixed T1.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricTemplateSet<T> {
    m0: ParametricMap<T>,
    t2: ParametricMap<T>,
    t1_fixed_ms: f64,
    provenance: String,
}

impl<T: Real> ParametricTemplateSet<T> {
    pub fn new(m0: ParametricMap<T>, t2: ParametricMap<T>, provenance: impl Into<String>) -> Result<Self> {
        Self::with_t1(m0, t2, T1_FIXED_MS, provenance)
    }

    pub fn with_t1(
        m0: ParametricMap<T>,
        t2: ParametricMap<T>,
        t1_fixed_ms: f64,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if m0.kind() != MapKind::M0 || t2.kind() != MapKind::T2 {
            return Err(ForgeError::invalid("template set needs an M0 map and a T2 map"));
        }
        t2.data().ensure_dims(m0.dims())?;
        if !(t1_fixed_ms > 0.0) {
            return Err(ForgeError::invalid("T1 must be positive"));
        }
        Ok(Self {
            m0,
            t2,
            t1_fixed_ms,
            provenance: provenance.into(),
        })
    }

    pub fn m0(&self) -> &ParametricMap<T> {
        &self.m0
    }

    pub fn t2(&self) -> &ParametricMap<T> {
        &self.t2
    }

    pub fn t1_fixed_ms(&self) -> f64 {
        self.t1_fixed_ms
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn dims(&self) -> (usize, usize) {
        self.m0.dims()
    }

    /// Replaces the T2 map, keeping M0, T1 and provenance.
    pub fn with_t2_map(&self, t2: ParametricMap<T>, note: &str) -> Result<Self> {
        Self::with_t1(
            self.m0.clone(),
            t2,
            self.t1_fixed_ms,
            format!("{}|{}", self.provenance, note),
        )
    }
}

/// PD-weighted image normalized by its maximum, used as a virtual M0 map.
pub fn pd_to_m0<T: Real>(pd: &WeightedImage<T>) -> Result<ParametricMap<T>> {
    let max = pd.data().max();
    if !(max > T::zero()) {
        return Err(ForgeError::AllZeroImage);
    }
    let data = pd.data().map(|v| (v / max).min(T::one()));
    ParametricMap::new(MapKind::M0, data)
}

/// Inverts the signal model pixelwise for T2.
///
/// Pixels with `M0 = 0` or a TR-corrected ratio `>= 1` get the 650 ms clamp
/// bound; ratios `<= 0` map to 0.
pub fn invert_t2<T: Real>(s: &WeightedImage<T>, m0: &ParametricMap<T>, t1_ms: f64) -> Result<ParametricMap<T>> {
    invert_t2_scaled(s, m0, t1_ms, 1.0)
}

/// [`invert_t2`] with a multiplicative intensity scale applied to `s` first.
pub fn invert_t2_scaled<T: Real>(
    s: &WeightedImage<T>,
    m0: &ParametricMap<T>,
    t1_ms: f64,
    intensity_scale: f64,
) -> Result<ParametricMap<T>> {
    s.data().ensure_dims(m0.dims())?;
    if !(t1_ms > 0.0) {
        return Err(ForgeError::invalid("T1 must be positive"));
    }
    let saturation = 1.0 - (-s.tr_ms() / t1_ms).exp();
    let te = s.te_ms();
    let (rows, cols) = s.dims();
    let out = Grid2::from_fn(rows, cols, |r, c| {
        let sig = s.data().get(r, c).as_f64() * intensity_scale;
        let m = m0.data().get(r, c).as_f64();
        T::lit(t2_from_ratio(sig, m, saturation, te))
    });
    ParametricMap::new(MapKind::T2, out)
}

fn t2_from_ratio(sig: f64, m0: f64, saturation: f64, te: f64) -> f64 {
    if m0 <= 0.0 {
        return T2_MAX_MS;
    }
    let ratio = sig / (m0 * saturation);
    if ratio >= 1.0 {
        T2_MAX_MS
    } else if ratio <= 0.0 {
        0.0
    } else {
        (-te / ratio.ln()).clamp(0.0, T2_MAX_MS)
    }
}

/// Forward signal model, used to synthesize weighted images from templates.
pub fn signal_model(m0: f64, t2_ms: f64, t1_ms: f64, te_ms: f64, tr_ms: f64) -> f64 {
    m0 * (1.0 - (-tr_ms / t1_ms).exp()) * (-te_ms / t2_ms).exp()
}

/// Bilinear resampling on pixel-center coordinates; edges are clamped.
pub fn resample_bilinear<T: Real>(map: &ParametricMap<T>, rows: usize, cols: usize) -> Result<ParametricMap<T>> {
    if rows < 2 || cols < 2 {
        return Err(ForgeError::invalid("resample target must be at least 2x2"));
    }
    let out = resample_grid(map.data(), rows, cols);
    ParametricMap::new(map.kind(), out)
}

pub(crate) fn resample_grid<T: Real>(src: &Grid2<T>, rows: usize, cols: usize) -> Grid2<T> {
    if src.dims() == (rows, cols) {
        return src.clone();
    }
    let axis = |n_src: usize, n_dst: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_src as f64 / n_dst as f64;
        (0..n_dst)
            .map(|i| {
                let p = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_src - 1) as f64);
                let i0 = p.floor() as usize;
                let i1 = (i0 + 1).min(n_src - 1);
                (i0, i1, p - i0 as f64)
            })
            .collect()
    };
    let ys = axis(src.rows(), rows);
    let xs = axis(src.cols(), cols);
    Grid2::from_fn(rows, cols, |r, c| {
        let (r0, r1, fy) = ys[r];
        let (c0, c1, fx) = xs[c];
        let v = |rr, cc| src.get(rr, cc).as_f64();
        let top = v(r0, c0) * (1.0 - fx) + v(r0, c1) * fx;
        let bot = v(r1, c0) * (1.0 - fx) + v(r1, c1) * fx;
        let lo = src.get(r0, c0).min(src.get(r0, c1)).min(src.get(r1, c0)).min(src.get(r1, c1));
        let hi = src.get(r0, c0).max(src.get(r0, c1)).max(src.get(r1, c0)).max(src.get(r1, c1));
        T::lit(top * (1.0 - fy) + bot * fy).max(lo).min(hi)
    })
}

/// Counter-clockwise rotation by a multiple of 90 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u32 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    pub fn from_degrees(deg: u32) -> Option<Self> {
        match deg % 360 {
            0 => Some(Rotation::R0),
            90 => Some(Rotation::R90),
            180 => Some(Rotation::R180),
            270 => Some(Rotation::R270),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Flip {
    None,
    /// Mirror columns (left-right).
    Horizontal,
    /// Mirror rows (up-down).
    Vertical,
}

impl Flip {
    pub const ALL: [Flip; 3] = [Flip::None, Flip::Horizontal, Flip::Vertical];
}

/// Rotates then flips a grid.
pub fn transform_grid<T: Real>(g: &Grid2<T>, rot: Rotation, flip: Flip) -> Result<Grid2<T>> {
    let (rows, cols) = g.dims();
    if matches!(rot, Rotation::R90 | Rotation::R270) && rows != cols {
        return Err(ForgeError::NonSquareGrid(rot.degrees()));
    }
    // Output pixel (r, c) pulls from the source pixel that lands on it.
    let rotated = match rot {
        Rotation::R0 => g.clone(),
        Rotation::R90 => Grid2::from_fn(rows, cols, |r, c| g.get(c, cols - 1 - r)),
        Rotation::R180 => Grid2::from_fn(rows, cols, |r, c| g.get(rows - 1 - r, cols - 1 - c)),
        Rotation::R270 => Grid2::from_fn(rows, cols, |r, c| g.get(rows - 1 - c, r)),
    };
    Ok(match flip {
        Flip::None => rotated,
        Flip::Horizontal => Grid2::from_fn(rows, cols, |r, c| rotated.get(r, cols - 1 - c)),
        Flip::Vertical => Grid2::from_fn(rows, cols, |r, c| rotated.get(rows - 1 - r, c)),
    })
}

/// Applies the same rotation and flip to every map of the set.
pub fn augment<T: Real>(set: &ParametricTemplateSet<T>, rot: Rotation, flip: Flip) -> Result<ParametricTemplateSet<T>> {
    let (rows, cols) = set.dims();
    if rows != cols {
        return Err(ForgeError::NonSquareGrid(rot.degrees()));
    }
    if rot == Rotation::R0 && flip == Flip::None {
        return Ok(set.clone());
    }
    let m0 = ParametricMap::new(MapKind::M0, transform_grid(set.m0().data(), rot, flip)?)?;
    let t2 = ParametricMap::new(MapKind::T2, transform_grid(set.t2().data(), rot, flip)?)?;
    ParametricTemplateSet::with_t1(
        m0,
        t2,
        set.t1_fixed_ms(),
        format!("{}|rot{}|flip{:?}", set.provenance(), rot.degrees(), flip),
    )
}

/// Spatially uniform tissue.
pub fn uniform_templates<T: Real>(n: usize, m0: f64, t2_ms: f64) -> Result<ParametricTemplateSet<T>> {
    ParametricTemplateSet::new(
        ParametricMap::new(MapKind::M0, Grid2::filled(n, n, T::lit(m0)))?,
        ParametricMap::new(MapKind::T2, Grid2::filled(n, n, T::lit(t2_ms)))?,
        format!("uniform(n={n},m0={m0},t2={t2_ms})"),
    )
}

/// Uniform disk of the given radius (fraction of the half-FOV) on an empty background.
pub fn disk_templates<T: Real>(n: usize, radius_frac: f64, m0: f64, t2_ms: f64) -> Result<ParametricTemplateSet<T>> {
    let inside = |r: usize, c: usize| {
        let x = normalized_coord(c, n);
        let y = normalized_coord(r, n);
        x * x + y * y <= radius_frac * radius_frac
    };
    let m0g = Grid2::from_fn(n, n, |r, c| if inside(r, c) { T::lit(m0) } else { T::zero() });
    let t2g = Grid2::from_fn(n, n, |r, c| if inside(r, c) { T::lit(t2_ms) } else { T::zero() });
    ParametricTemplateSet::new(
        ParametricMap::new(MapKind::M0, m0g)?,
        ParametricMap::new(MapKind::T2, t2g)?,
        format!("disk(n={n},r={radius_frac},m0={m0},t2={t2_ms})"),
    )
}

/// Pixel-center coordinate in [-1, 1].
fn normalized_coord(i: usize, n: usize) -> f64 {
    (2.0 * i as f64 + 1.0) / n as f64 - 1.0
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    m0: f64,
    t2: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Procedural head-like phantom: scalp, grey matter, white matter, ventricles
/// and a few focal regions. `variant` perturbs geometry and tissue values
/// deterministically.
pub fn synthetic_head<T: Real>(n: usize, variant: u64) -> Result<ParametricTemplateSet<T>> {
    let mut rng = rng::stream(variant, 0, StreamTag::Phantom);
    let mut u = |lo: f64, hi: f64| rng::uniform(&mut rng, lo, hi);
    let sx = u(0.92, 1.05);
    let sy = u(0.92, 1.05);
    let tilt = u(-0.15, 0.15);
    let mut layers = vec![
        Ellipse { cx: 0.0, cy: 0.0, a: 0.72 * sx, b: 0.90 * sy, angle: tilt, m0: u(0.75, 0.9), t2: u(55.0, 75.0) },
        Ellipse { cx: 0.0, cy: 0.0, a: 0.66 * sx, b: 0.84 * sy, angle: tilt, m0: u(0.08, 0.15), t2: u(20.0, 40.0) },
        Ellipse { cx: 0.0, cy: 0.0, a: 0.62 * sx, b: 0.80 * sy, angle: tilt, m0: u(0.75, 0.85), t2: u(90.0, 115.0) },
        Ellipse { cx: 0.0, cy: 0.02, a: 0.50 * sx, b: 0.66 * sy, angle: tilt, m0: u(0.6, 0.72), t2: u(65.0, 85.0) },
    ];
    let vent_t2 = u(450.0, 620.0);
    let vent_dx = u(0.08, 0.14);
    for side in [-1.0, 1.0] {
        layers.push(Ellipse {
            cx: side * vent_dx * sx,
            cy: u(-0.12, 0.0),
            a: u(0.05, 0.08),
            b: u(0.16, 0.24),
            angle: tilt + side * u(0.1, 0.3),
            m0: u(0.95, 1.0),
            t2: vent_t2,
        });
    }
    for _ in 0..3 {
        let r = u(0.0, 0.35);
        let th = u(0.0, std::f64::consts::TAU);
        layers.push(Ellipse {
            cx: r * th.cos(),
            cy: r * th.sin(),
            a: u(0.03, 0.08),
            b: u(0.03, 0.08),
            angle: u(0.0, 3.14),
            m0: u(0.6, 0.95),
            t2: u(60.0, 300.0),
        });
    }
    let mut m0g = Grid2::filled(n, n, T::zero());
    let mut t2g = Grid2::filled(n, n, T::zero());
    for r in 0..n {
        for c in 0..n {
            let x = normalized_coord(c, n);
            let y = normalized_coord(r, n);
            // Later layers paint over earlier ones.
            if let Some(e) = layers.iter().rev().find(|e| e.contains(x, y)) {
                m0g.set(r, c, T::lit(e.m0.clamp(0.0, 1.0)));
                t2g.set(r, c, T::lit(e.t2.clamp(0.0, T2_MAX_MS)));
            }
        }
    }
    ParametricTemplateSet::new(
        ParametricMap::new(MapKind::M0, m0g)?,
        ParametricMap::new(MapKind::T2, t2g)?,
        format!("synthetic_head(n={n},variant={variant})"),
    )
}

/// Builds templates from registered PD- and T2-weighted images.
pub fn templates_from_weighted<T: Real>(
    pd: &WeightedImage<T>,
    t2w: &WeightedImage<T>,
    size: usize,
    intensity_scale: f64,
    provenance: &str,
) -> Result<ParametricTemplateSet<T>> {
    let m0 = pd_to_m0(pd)?;
    let t2 = invert_t2_scaled(t2w, &m0, T1_FIXED_MS, intensity_scale)?;
    let m0 = resample_bilinear(&m0, size, size)?;
    let t2 = resample_bilinear(&t2, size, size)?;
    ParametricTemplateSet::new(m0, t2, provenance)
}

/// Mean of a grid, mainly for diagnostics.
pub fn mean<T: Real>(g: &Grid2<T>) -> T {
    g.sum() / from_usize(g.data().len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(rows: usize, cols: usize, v: &[f64], te: f64, tr: f64) -> WeightedImage<f64> {
        WeightedImage::new(Grid2::new(rows, cols, v.to_vec()).unwrap(), te, tr).unwrap()
    }

    #[test]
    fn pd_normalization() {
        let m0 = pd_to_m0(&img(2, 2, &[1.0, 2.0, 3.0, 4.0], 10.0, 1000.0)).unwrap();
        assert_eq!(m0.data().data(), &[0.25, 0.5, 0.75, 1.0]);

        let m0 = pd_to_m0(&img(1, 3, &[0.2, 7.3, 1.0], 10.0, 1000.0)).unwrap();
        assert_eq!(m0.data().get(0, 1), 1.0);

        let m0 = pd_to_m0(&img(2, 2, &[3.5; 4], 10.0, 1000.0)).unwrap();
        assert!(m0.data().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pd_all_zero_errors() {
        assert!(matches!(
            pd_to_m0(&img(2, 2, &[0.0; 4], 10.0, 1000.0)),
            Err(ForgeError::AllZeroImage)
        ));
    }

    #[test]
    fn weighted_image_rejects_bad_inputs() {
        let g = Grid2::new(1, 2, vec![1.0, -1.0]).unwrap();
        assert!(WeightedImage::new(g, 10.0, 100.0).is_err());
        let g = Grid2::new(1, 2, vec![1.0, 1.0]).unwrap();
        assert!(WeightedImage::new(g.clone(), 0.0, 100.0).is_err());
        assert!(WeightedImage::new(g, 10.0, -1.0).is_err());
    }

    #[test]
    fn invert_t2_cancels_log() {
        // TR >> T1 so the saturation factor is 1.
        let te = 37.0;
        let s = img(1, 1, &[0.6 * (-1.0f64).exp()], te, 1e6);
        let m0 = ParametricMap::new(MapKind::M0, Grid2::filled(1, 1, 0.6)).unwrap();
        let t2 = invert_t2(&s, &m0, 2000.0).unwrap();
        assert!((t2.data().get(0, 0) - te).abs() < 1e-9);
    }

    /// Bisection on the forward model, independent of the closed-form inverse.
    fn bisect_t2(sig: f64, m0: f64, t1: f64, te: f64, tr: f64) -> f64 {
        let (mut lo, mut hi) = (1e-6, 1e4);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if signal_model(m0, mid, t1, te, tr) < sig {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn invert_t2_matches_bisection() {
        let oracle = bisect_t2(0.475106, 1.0, 2000.0, 100.0, 6000.0);
        assert!((oracle - 144.27).abs() < 0.01, "oracle {oracle}");
        let s = img(1, 1, &[0.475106], 100.0, 6000.0);
        let m0 = ParametricMap::new(MapKind::M0, Grid2::filled(1, 1, 1.0)).unwrap();
        let t2 = invert_t2(&s, &m0, 2000.0).unwrap().data().get(0, 0);
        assert!((t2 - oracle).abs() < 1e-6, "{t2} vs {oracle}");
    }

    #[test]
    fn invert_t2_degenerate_pixels() {
        let s = img(1, 4, &[0.9, 0.0, 0.5, 0.2], 50.0, 1e6);
        let m0 = ParametricMap::new(MapKind::M0, Grid2::new(1, 4, vec![0.9, 0.5, 0.0, 0.5]).unwrap()).unwrap();
        let t2 = invert_t2(&s, &m0, 2000.0).unwrap();
        assert_eq!(t2.data().get(0, 0), T2_MAX_MS); // S = M0
        assert_eq!(t2.data().get(0, 1), 0.0); // ratio 0
        assert_eq!(t2.data().get(0, 2), T2_MAX_MS); // M0 = 0
        assert!(t2.data().get(0, 3) > 0.0 && t2.data().get(0, 3) < T2_MAX_MS);
    }

    #[test]
    fn invert_t2_dim_mismatch() {
        let s = img(1, 2, &[0.5, 0.5], 50.0, 1000.0);
        let m0 = ParametricMap::new(MapKind::M0, Grid2::filled(2, 1, 1.0)).unwrap();
        assert!(matches!(invert_t2(&s, &m0, 2000.0), Err(ForgeError::DimMismatch { .. })));
    }

    #[test]
    fn resample_identity_constant_and_ramp() {
        let ramp = ParametricMap::new(MapKind::M0, Grid2::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(resample_bilinear(&ramp, 2, 2).unwrap(), ramp);
        let up = resample_bilinear(&ramp, 4, 4).unwrap();
        let row: Vec<f64> = (0..4).map(|c| up.data().get(1, c)).collect();
        assert_eq!(row, vec![0.0, 0.25, 0.75, 1.0]);

        let k = ParametricMap::new(MapKind::T2, Grid2::filled(3, 5, 80.0)).unwrap();
        let r = resample_bilinear(&k, 7, 2).unwrap();
        assert!(r.data().data().iter().all(|&v| v == 80.0));
    }

    #[test]
    fn augment_group_properties() {
        let set = synthetic_head::<f64>(16, 3).unwrap();
        assert_eq!(augment(&set, Rotation::R0, Flip::None).unwrap(), set);
        let twice = augment(&augment(&set, Rotation::R90, Flip::None).unwrap(), Rotation::R90, Flip::None).unwrap();
        let once = augment(&set, Rotation::R180, Flip::None).unwrap();
        assert_eq!(twice.m0(), once.m0());
        assert_eq!(twice.t2(), once.t2());
        let hh = augment(&augment(&set, Rotation::R0, Flip::Horizontal).unwrap(), Rotation::R0, Flip::Horizontal).unwrap();
        assert_eq!(hh.m0(), set.m0());
        assert!(hh.provenance().contains("flipHorizontal"));
    }

    #[test]
    fn rotation_is_counter_clockwise() {
        // [[1,2],[3,4]] rotated 90 CCW is [[2,4],[1,3]].
        let g = Grid2::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = transform_grid(&g, Rotation::R90, Flip::None).unwrap();
        assert_eq!(r.data(), &[2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn non_square_rotation_rejected() {
        let g = Grid2::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(transform_grid(&g, Rotation::R90, Flip::None), Err(ForgeError::NonSquareGrid(90))));
        assert!(transform_grid(&g, Rotation::R180, Flip::Vertical).is_ok());
    }

    #[test]
    fn synthetic_head_respects_bounds() {
        let h = synthetic_head::<f64>(64, 11).unwrap();
        assert!(h.m0().data().max() <= 1.0);
        assert!(h.t2().data().max() <= T2_MAX_MS);
        assert!(h.m0().data().max() > 0.5);
        assert_eq!(h, synthetic_head::<f64>(64, 11).unwrap());
        assert_ne!(h, synthetic_head::<f64>(64, 12).unwrap());
    }
}
