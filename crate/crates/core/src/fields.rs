//! Non-ideal experimental factors: transmit-field inhomogeneity, rigid
//! in-plane motion, echo-shift gradient fluctuation and receiver noise.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::grid::{ComplexImage, Grid2};
use crate::num::Real;
use crate::rng::{self, StreamTag};
use crate::sequence::{EventKind, GradientTag, SequenceProgram};

/// Default bounds of the normalized B1+ multiplier.
pub const B1_BOUNDS: (f64, f64) = (0.7, 1.2);

/// One Gaussian bump `amplitude * exp(-((x-cx)^2 + (y-cy)^2) / (2 sigma^2))`
/// on normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
    pub amplitude: f64,
}

/// Low-order polynomial plus Gaussian description of a transmit field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B1FieldSpec {
    pub poly_order: usize,
    /// `poly_coeffs[nx][ny]` multiplies `x^nx * y^ny`; shape `(Np+1) x (Np+1)`.
    pub poly_coeffs: Vec<Vec<f64>>,
    pub gaussians: Vec<GaussianBump>,
    pub norm_bounds: (f64, f64),
}

impl B1FieldSpec {
    /// Spec with all coefficients zero and no Gaussians.
    pub fn flat(poly_order: usize) -> Self {
        Self {
            poly_order,
            poly_coeffs: vec![vec![0.0; poly_order + 1]; poly_order + 1],
            gaussians: Vec::new(),
            norm_bounds: B1_BOUNDS,
        }
    }

    /// Random field: mixed terms `x^nx y^ny` with `1 <= nx, ny <= Np` get
    /// coefficients in [-1, 1]; each Gaussian gets a center in [-1, 1]^2, a
    /// width in [0.2, 1.0] and an amplitude in [-1, 1].
    pub fn random(poly_order: usize, num_gaussians: usize, norm_bounds: (f64, f64), seed: u64, index: u64) -> Self {
        let mut r = rng::stream(seed, index, StreamTag::B1);
        let mut spec = Self::flat(poly_order);
        spec.norm_bounds = norm_bounds;
        for nx in 1..=poly_order {
            for ny in 1..=poly_order {
                spec.poly_coeffs[nx][ny] = rng::uniform(&mut r, -1.0, 1.0);
            }
        }
        for _ in 0..num_gaussians {
            spec.gaussians.push(GaussianBump {
                cx: rng::uniform(&mut r, -1.0, 1.0),
                cy: rng::uniform(&mut r, -1.0, 1.0),
                sigma: rng::uniform(&mut r, 0.2, 1.0),
                amplitude: rng::uniform(&mut r, -1.0, 1.0),
            });
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.poly_order + 1;
        if self.poly_coeffs.len() != n || self.poly_coeffs.iter().any(|r| r.len() != n) {
            return Err(ForgeError::invalid(format!("polynomial coefficients must be {n}x{n}")));
        }
        if self.poly_coeffs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(ForgeError::invalid("polynomial coefficients must be finite"));
        }
        if self.gaussians.iter().any(|g| !(g.sigma > 0.0) || !g.amplitude.is_finite()) {
            return Err(ForgeError::invalid("Gaussian width must be positive"));
        }
        let (lo, hi) = self.norm_bounds;
        if !(lo < hi) {
            return Err(ForgeError::invalid(format!("B1 bounds need lo < hi, got ({lo}, {hi})")));
        }
        Ok(())
    }

    /// Un-normalized field value at normalized coordinates.
    pub fn delta_b(&self, x: f64, y: f64) -> f64 {
        let mut v = 0.0;
        let mut xp = 1.0;
        for row in &self.poly_coeffs {
            let mut yp = 1.0;
            for &c in row {
                v += c * xp * yp;
                yp *= y;
            }
            xp *= x;
        }
        for g in &self.gaussians {
            let d2 = (x - g.cx).powi(2) + (y - g.cy).powi(2);
            v += g.amplitude * (-d2 / (2.0 * g.sigma * g.sigma)).exp();
        }
        v
    }
}

/// Normalized coordinate of index `i` on an `n`-point axis spanning [-1, 1]
/// including both ends.
pub fn b1_axis(i: usize, n: usize) -> f64 {
    if n < 2 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// Un-normalized field on a `rows x cols` grid; columns run along x.
pub fn delta_b_grid(spec: &B1FieldSpec, rows: usize, cols: usize) -> Grid2<f64> {
    Grid2::from_fn(rows, cols, |r, c| spec.delta_b(b1_axis(c, cols), b1_axis(r, rows)))
}

/// Flip-angle multiplier map.
#[derive(Debug, Clone, PartialEq)]
pub struct B1Map<T> {
    data: Grid2<T>,
}

impl<T: Real> B1Map<T> {
    pub fn new(data: Grid2<T>) -> Result<Self> {
        if data.data().iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(ForgeError::invalid("B1 map must be finite and non-negative"));
        }
        Ok(Self { data })
    }

    pub fn uniform(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            data: Grid2::filled(rows, cols, T::lit(value)),
        }
    }

    pub fn data(&self) -> &Grid2<T> {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dims()
    }
}

/// Affine min-max rescale into `[lo, hi]`. A constant input maps to the
/// midpoint.
pub fn normalize_to_bounds(g: &Grid2<f64>, (lo, hi): (f64, f64)) -> Grid2<f64> {
    let min = g.min();
    let max = g.max();
    let span = max - min;
    if !(span > 0.0) {
        return g.map(|_| 0.5 * (lo + hi));
    }
    g.map(|v| {
        let s = (v - min) / span;
        (lo * (1.0 - s) + hi * s).clamp(lo, hi)
    })
}

/// Evaluates and normalizes a B1 spec.
pub fn gen_b1<T: Real>(spec: &B1FieldSpec, rows: usize, cols: usize) -> Result<B1Map<T>> {
    spec.validate()?;
    let g = normalize_to_bounds(&delta_b_grid(spec, rows, cols), spec.norm_bounds);
    B1Map::new(g.cast())
}

/// Draws a random spec from `seed` and evaluates it.
pub fn gen_b1_seeded<T: Real>(
    poly_order: usize,
    num_gaussians: usize,
    norm_bounds: (f64, f64),
    rows: usize,
    cols: usize,
    seed: u64,
) -> Result<B1Map<T>> {
    gen_b1(&B1FieldSpec::random(poly_order, num_gaussians, norm_bounds, seed, 0), rows, cols)
}

/// Uniform in-plane rigid motion over one shot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    /// Translation velocity along readout, cm/s.
    pub v_ro: f64,
    /// Translation velocity along phase encoding, cm/s.
    pub v_pe: f64,
    /// Angular velocity, degrees/s, counter-clockwise.
    pub omega_deg_s: f64,
    pub enabled: bool,
}

impl MotionSpec {
    pub const fn new(v_ro: f64, v_pe: f64, omega_deg_s: f64) -> Self {
        Self {
            v_ro,
            v_pe,
            omega_deg_s,
            enabled: true,
        }
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub const fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::zero()
        }
    }

    /// The "severe motion" setting used to illustrate motion artifacts.
    pub const fn severe() -> Self {
        Self::new(-8.0, -5.0, -32.0)
    }

    /// Velocities that are actually applied: zero when disabled.
    pub fn effective(&self) -> Self {
        if self.enabled {
            *self
        } else {
            Self::zero()
        }
    }

    pub fn omega_rad_s(&self) -> f64 {
        self.omega_deg_s.to_radians()
    }
}

impl Default for MotionSpec {
    fn default() -> Self {
        Self::disabled()
    }
}

/// Per-pixel velocity of a rigid in-plane motion.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField<T> {
    pub v_ro: Grid2<T>,
    pub v_pe: Grid2<T>,
}

/// Pixel-center physical coordinate in cm for index `i` of `n` across `fov_cm`,
/// origin at the grid center.
#[inline]
pub fn pixel_center_cm(i: usize, n: usize, fov_cm: f64) -> f64 {
    (i as f64 + 0.5) * fov_cm / n as f64 - 0.5 * fov_cm
}

/// `V_RO = -w*y + v_ro`, `V_PE = w*x + v_pe` at pixel centers (cm/s).
pub fn gen_velocity_field<T: Real>(motion: &MotionSpec, rows: usize, cols: usize, fov_cm: f64) -> Result<VelocityField<T>> {
    if !(fov_cm > 0.0) {
        return Err(ForgeError::invalid("FOV must be positive"));
    }
    let m = motion.effective();
    let w = m.omega_rad_s();
    let v_ro = Grid2::from_fn(rows, cols, |r, _| T::lit(-w * pixel_center_cm(r, rows, fov_cm) + m.v_ro));
    let v_pe = Grid2::from_fn(rows, cols, |_, c| T::lit(w * pixel_center_cm(c, cols, fov_cm) + m.v_pe));
    Ok(VelocityField { v_ro, v_pe })
}

/// Draws `n` fractional fluctuations in `[-max_frac, max_frac]`.
pub fn draw_gradient_fluctuations(max_frac: f64, seed: u64, index: u64, n: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, index, StreamTag::GradFluct);
    (0..n).map(|_| rng::uniform(&mut r, -max_frac, max_frac)).collect()
}

/// Scales the `i`-th echo-shift lobe (in event order) by `1 + fracs[i]`.
/// Lobes beyond the end of `fracs` are left alone.
pub fn apply_gradient_fluctuation(program: &SequenceProgram, fracs: &[f64]) -> SequenceProgram {
    let mut k = 0;
    program.map_events(|_, e| match e.kind {
        EventKind::Gradient(mut g) if g.tag == GradientTag::EchoShift => {
            if let Some(&f) = fracs.get(k) {
                g.amplitude_mt_m *= 1.0 + f;
            }
            k += 1;
            crate::sequence::Event {
                kind: EventKind::Gradient(g),
                ..*e
            }
        }
        _ => *e,
    })
}

/// Scales every echo-shift lobe by an independent `1 + u`,
/// `u ~ U(-max_frac, max_frac)`, drawn from `seed`.
pub fn perturb_gradient_areas(program: &SequenceProgram, max_frac: f64, seed: u64) -> SequenceProgram {
    let n = program
        .gradient_events()
        .filter(|(_, g)| g.tag == GradientTag::EchoShift)
        .count();
    apply_gradient_fluctuation(program, &draw_gradient_fluctuations(max_frac, seed, 0, n))
}

/// Complex Gaussian receiver noise with peak-referenced SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// `None` means noiseless.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub const fn noiseless() -> Self {
        Self { snr_db: None, seed: 0 }
    }

    /// Noise standard deviation per real/imaginary channel for a given peak.
    pub fn sigma(&self, peak: f64) -> f64 {
        match self.snr_db {
            Some(db) if db.is_finite() => peak / 10f64.powf(db / 20.0),
            _ => 0.0,
        }
    }
}

/// Adds noise from stream `(spec.seed, 0)`.
pub fn add_noise<T: Real>(img: &ComplexImage<T>, spec: &NoiseSpec) -> ComplexImage<T> {
    add_noise_stream(img, spec, 0)
}

/// Adds noise from stream `(spec.seed, stream_index)`. Independent
/// realizations for the same spec use different stream indices.
pub fn add_noise_stream<T: Real>(img: &ComplexImage<T>, spec: &NoiseSpec, stream_index: u64) -> ComplexImage<T> {
    let sigma = spec.sigma(img.max_abs().as_f64());
    if sigma == 0.0 {
        return img.clone();
    }
    let mut r = rng::stream(spec.seed, stream_index, StreamTag::Noise);
    let mut out = img.clone();
    for z in out.data_mut() {
        let re = sigma * rng::standard_normal(&mut r);
        let im = sigma * rng::standard_normal(&mut r);
        *z = *z + Complex::new(T::lit(re), T::lit(im));
    }
    out
}

/// All non-ideal factors applied to one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct NonIdealSet<T> {
    /// `None` means a perfect transmit field.
    pub b1: Option<B1Map<T>>,
    pub motion: MotionSpec,
    /// Fractional fluctuation per echo-shift lobe.
    pub grad_fluct: Vec<f64>,
    pub noise: NoiseSpec,
}

impl<T: Real> NonIdealSet<T> {
    pub fn ideal() -> Self {
        Self {
            b1: None,
            motion: MotionSpec::disabled(),
            grad_fluct: Vec::new(),
            noise: NoiseSpec::noiseless(),
        }
    }
}

impl<T: Real> Default for NonIdealSet<T> {
    fn default() -> Self {
        Self::ideal()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{build_se_moled, MoledParams};

    #[test]
    fn flat_b1_is_midpoint() {
        let m: B1Map<f64> = gen_b1(&B1FieldSpec::flat(2), 16, 16).unwrap();
        assert!(m.data().data().iter().all(|&v| v == 0.95));
    }

    #[test]
    fn b1_hits_bounds() {
        for seed in 0..20 {
            let m: B1Map<f64> = gen_b1_seeded(2, 1, B1_BOUNDS, 32, 24, seed).unwrap();
            assert_eq!(m.data().min(), 0.7);
            assert_eq!(m.data().max(), 1.2);
        }
    }

    #[test]
    fn b1_cross_term() {
        let mut s = B1FieldSpec::flat(2);
        s.poly_coeffs[1][1] = 1.0;
        assert_eq!(s.delta_b(0.5, 0.5), 0.25);
        // 5-point axis puts 0.5 at index 3.
        let g = delta_b_grid(&s, 5, 5);
        assert_eq!(g.get(3, 3), 0.25);
        assert_eq!(g.get(0, 4), -1.0);
    }

    #[test]
    fn b1_normalization_preserves_order() {
        let spec = B1FieldSpec::random(2, 1, B1_BOUNDS, 9, 0);
        let raw = delta_b_grid(&spec, 12, 12);
        let norm = normalize_to_bounds(&raw, B1_BOUNDS);
        let (a, b) = (raw.data(), norm.data());
        for i in 0..a.len() {
            for j in 0..a.len() {
                if a[i] < a[j] {
                    assert!(b[i] <= b[j]);
                }
            }
        }
    }

    #[test]
    fn velocity_closed_form() {
        let f: VelocityField<f64> = gen_velocity_field(&MotionSpec::new(1.5, -2.0, 0.0), 8, 8, 22.0).unwrap();
        assert!(f.v_ro.data().iter().all(|&v| v == 1.5));
        assert!(f.v_pe.data().iter().all(|&v| v == -2.0));
        // Odd grid has a pixel at the origin.
        let f: VelocityField<f64> = gen_velocity_field(&MotionSpec::new(0.0, 0.0, 30.0), 5, 5, 10.0).unwrap();
        assert_eq!(f.v_pe.get(0, 2), 0.0);
        let w = 30f64.to_radians();
        assert!((f.v_ro.get(0, 2) - w * 4.0).abs() < 1e-12);
        let f: VelocityField<f64> = gen_velocity_field(&MotionSpec::new(3.0, 4.0, 30.0), 5, 5, 10.0).unwrap();
        assert_eq!((f.v_ro.get(2, 2), f.v_pe.get(2, 2)), (3.0, 4.0));
    }

    #[test]
    fn disabled_motion_has_zero_field() {
        let mut m = MotionSpec::severe();
        m.enabled = false;
        let f: VelocityField<f64> = gen_velocity_field(&m, 4, 4, 22.0).unwrap();
        assert!(f.v_ro.data().iter().chain(f.v_pe.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn fluctuation_only_touches_echo_shift() {
        let p = build_se_moled(&MoledParams::desk()).unwrap();
        assert_eq!(perturb_gradient_areas(&p, 0.0, 5), p);
        let q = perturb_gradient_areas(&p, 0.05, 5);
        assert_eq!(q, perturb_gradient_areas(&p, 0.05, 5));
        assert_eq!(q.events().len(), p.events().len());
        let mut changed = 0;
        for (a, b) in p.events().iter().zip(q.events()) {
            assert_eq!(a.t_start_ms, b.t_start_ms);
            assert_eq!(a.duration_ms, b.duration_ms);
            match (a.kind, b.kind) {
                (EventKind::Gradient(ga), EventKind::Gradient(gb)) if ga.tag == GradientTag::EchoShift => {
                    if ga.amplitude_mt_m != 0.0 {
                        let s = gb.amplitude_mt_m / ga.amplitude_mt_m;
                        assert!((0.95 - 1e-12..=1.05 + 1e-12).contains(&s));
                        changed += 1;
                    }
                }
                _ => assert_eq!(a, b),
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn fluctuation_draw_statistics() {
        let d = draw_gradient_fluctuations(0.05, 42, 0, 10_000);
        assert!(d.iter().all(|u| (-0.05..=0.05).contains(u)));
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        assert!(mean.abs() < 0.002, "mean {mean}");
    }

    #[test]
    fn noise_identity_and_determinism() {
        let img = ComplexImage::<f64>::zeros(4, 4, crate::grid::Domain::Image);
        let mut img = img;
        img.set(1, 1, Complex::new(1.0, 0.0));
        assert_eq!(add_noise(&img, &NoiseSpec::noiseless()), img);
        let spec = NoiseSpec {
            snr_db: Some(30.0),
            seed: 3,
        };
        assert_eq!(add_noise(&img, &spec), add_noise(&img, &spec));
        assert_ne!(add_noise_stream(&img, &spec, 1), add_noise(&img, &spec));
    }
}
