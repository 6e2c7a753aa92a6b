//! Built-in invariant and oracle checks behind `forge validate`.
//!
//! The analytic suite runs in well under a second and exercises the closed
//! forms. The full suite adds end-to-end Bloch simulations at the desk preset.

use num_complex::Complex;

use crate::bloch::{apply_rf, evolve, simulate, SimConfig, SpinGrid};
use crate::error::Result;
use crate::fields::{delta_b_grid, gen_b1, gen_velocity_field, pixel_center_cm, B1FieldSpec, MotionSpec, NonIdealSet};
use crate::grid::{ComplexImage, Domain, Grid2};
use crate::metrics::{gsr, linreg, nrmse, Roi};
use crate::mriops::{apply_mask, fft2c, forward_parallel_pair, ifft2c, reconstruct_image, analytic_coils, SamplingMask};
use crate::physics::K_PER_AREA;
use crate::presets::Preset;
use crate::randomize::{sample_config, RandomizationBounds};
use crate::rng::{self, StreamTag};
use crate::sequence::{build_se, build_se_moled, from_text, to_text, validate_program, RfPulse, RfRole, SeParams};
use crate::phantom::{disk_templates, synthetic_head, uniform_templates};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Analytic,
    Full,
}

impl Suite {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "analytic" => Some(Self::Analytic),
            "full" => Some(Self::Full),
            _ => None,
        }
    }
}

/// One row of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

type CheckFn = fn() -> Result<(bool, String)>;

const ANALYTIC: &[(&str, CheckFn)] = &[
    ("fft_adjoint_parseval", fft_adjoint_parseval),
    ("mask_idempotence", mask_idempotence),
    ("motion_phase_closed_form", motion_phase_closed_form),
    ("velocity_field_formula", velocity_field_formula),
    ("b1_bounds_and_polynomial", b1_bounds_and_polynomial),
    ("randomization_bounds", randomization_bounds),
    ("metric_examples", metric_examples),
    ("sequence_programs_valid", sequence_programs_valid),
];

const FULL: &[(&str, CheckFn)] = &[
    ("spin_echo_decay", spin_echo_decay),
    ("moled_echo_peaks", moled_echo_peaks),
    ("motion_neutrality", motion_neutrality),
    ("data_consistency", data_consistency),
    ("aliasing_gsr", aliasing_gsr),
];

pub fn run_suite(suite: Suite) -> Vec<Check> {
    let mut list: Vec<(&str, CheckFn)> = ANALYTIC.to_vec();
    if suite == Suite::Full {
        list.extend_from_slice(FULL);
    }
    list.into_iter()
        .map(|(name, f)| match f() {
            Ok((pass, detail)) => Check { name, pass, detail },
            Err(e) => Check {
                name,
                pass: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}

/// Plain-text table of a report.
pub fn format_report(checks: &[Check]) -> String {
    let w = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for c in checks {
        let tag = if c.pass { "PASS" } else { "FAIL" };
        s.push_str(&format!("{tag}  {:w$}  {}\n", c.name, c.detail));
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    s.push_str(&format!("{} checks, {} failed\n", checks.len(), failed));
    s
}

fn random_image(n: usize, seed: u64, domain: Domain) -> ComplexImage<f64> {
    let mut r = rng::stream(seed, 0, StreamTag::Noise);
    let data = (0..n * n)
        .map(|_| Complex::new(rng::standard_normal(&mut r), rng::standard_normal(&mut r)))
        .collect();
    ComplexImage::new(n, n, domain, data).expect("square")
}

fn inner(a: &ComplexImage<f64>, b: &ComplexImage<f64>) -> Complex<f64> {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y.conj()).sum()
}

fn fft_adjoint_parseval() -> Result<(bool, String)> {
    let x = random_image(32, 1, Domain::Image);
    let y = random_image(32, 2, Domain::KSpace);
    let lhs = inner(&fft2c(&x)?, &y);
    let rhs = inner(&x, &ifft2c(&y)?);
    let adj = (lhs - rhs).norm() / lhs.norm().max(1e-300);
    let ex = x.energy();
    let par = (fft2c(&x)?.energy() - ex).abs() / ex;
    Ok((adj < 1e-10 && par < 1e-10, format!("adjoint {adj:.1e}, parseval {par:.1e}")))
}

fn mask_idempotence() -> Result<(bool, String)> {
    let k = random_image(16, 3, Domain::KSpace);
    let m = SamplingMask::uniform(16, 16, 2, 0)?;
    let once = apply_mask(&k, &m)?;
    let twice = apply_mask(&once, &m)?;
    Ok((once == twice, format!("{} of 16 lines kept", m.acquired())))
}

fn motion_phase_closed_form() -> Result<(bool, String)> {
    let mut r = rng::stream(11, 0, StreamTag::Velocity);
    let mut worst: f64 = 0.0;
    let excite = RfPulse {
        flip_deg: 90.0,
        phase_deg: 0.0,
        role: RfRole::Excitation { echo: None },
    };
    for _ in 0..20 {
        let (x0, y0) = (rng::uniform(&mut r, -10.0, 10.0), rng::uniform(&mut r, -10.0, 10.0));
        let (gx, gy) = (rng::uniform(&mut r, -20.0, 20.0), rng::uniform(&mut r, -20.0, 20.0));
        let (vx, vy) = (rng::uniform(&mut r, -10.0, 10.0), rng::uniform(&mut r, -10.0, 10.0));
        let t = rng::uniform(&mut r, 0.1, 5.0);
        let mut s = SpinGrid::<f64>::from_tissue(1, 1, 1.0, vec![1.0], vec![f64::INFINITY], vec![f64::INFINITY])?;
        s.place(0, 0, x0, y0);
        apply_rf(&mut s, &excite, None)?;
        let before = s.mxy[0];
        let steps = 7;
        let dt = t / steps as f64;
        let m = MotionSpec::new(vx, vy, 0.0);
        for k in 0..steps {
            evolve(&mut s, dt, gx, gy, &m, k as f64 * dt);
        }
        let got = -(s.mxy[0] / before).arg();
        let want = K_PER_AREA * (gx * (x0 * t + vx * t * t / 2000.0) + gy * (y0 * t + vy * t * t / 2000.0));
        let d = (got - want).rem_euclid(std::f64::consts::TAU);
        worst = worst.max(d.min(std::f64::consts::TAU - d));
    }
    Ok((worst < 1e-6, format!("max phase error {worst:.1e} rad")))
}

fn velocity_field_formula() -> Result<(bool, String)> {
    let mut r = rng::stream(12, 0, StreamTag::Velocity);
    let (n, fov) = (16, 22.0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = MotionSpec::new(
            rng::uniform(&mut r, -10.0, 10.0),
            rng::uniform(&mut r, -10.0, 10.0),
            rng::uniform(&mut r, -50.0, 50.0),
        );
        let f = gen_velocity_field::<f64>(&m, n, n, fov)?;
        let w = m.omega_deg_s * std::f64::consts::PI / 180.0;
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (pixel_center_cm(j, n, fov), pixel_center_cm(i, n, fov));
                let err = (f.v_ro.get(i, j) - (-w * y + m.v_ro)).abs() + (f.v_pe.get(i, j) - (w * x + m.v_pe)).abs();
                worst = worst.max(err);
            }
        }
    }
    Ok((worst < 1e-12, format!("100 specs, max error {worst:.1e} cm/s")))
}

fn b1_bounds_and_polynomial() -> Result<(bool, String)> {
    let mut spec = B1FieldSpec::random(3, 2, (0.7, 1.2), 5, 0);
    spec.poly_coeffs[1][0] = 0.3;
    let n = 33;
    let raw = delta_b_grid(&spec, n, n);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (-1.0 + 2.0 * j as f64 / (n - 1) as f64, -1.0 + 2.0 * i as f64 / (n - 1) as f64);
            let mut v = 0.0;
            for (a, row) in spec.poly_coeffs.iter().enumerate() {
                for (b, c) in row.iter().enumerate() {
                    v += c * x.powi(a as i32) * y.powi(b as i32);
                }
            }
            for g in &spec.gaussians {
                v += g.amplitude * (-((x - g.cx).powi(2) + (y - g.cy).powi(2)) / (2.0 * g.sigma * g.sigma)).exp();
            }
            worst = worst.max((raw.get(i, j) - v).abs());
        }
    }
    let map = gen_b1::<f64>(&spec, n, n)?;
    let (lo, hi) = (map.data().min(), map.data().max());
    let ok = worst < 1e-12 && lo == 0.7 && hi == 1.2;
    Ok((ok, format!("poly err {worst:.1e}, range [{lo}, {hi}]")))
}

fn randomization_bounds() -> Result<(bool, String)> {
    let b = RandomizationBounds::default();
    let inside = |v: f64, (lo, hi): (f64, f64)| (lo..=hi).contains(&v);
    for i in 0..1000 {
        let d = sample_config(&b, 3, i);
        let ok = inside(d.t2_scale, b.t2_scale)
            && d.snr_db.is_none_or(|s| inside(s, b.snr_db))
            && d.grad_fluct.iter().all(|&g| inside(g, b.grad_fluct))
            && inside(d.motion.v_ro, b.v_ro)
            && inside(d.motion.v_pe, b.v_pe)
            && inside(d.motion.omega_deg_s, b.omega);
        if !ok {
            return Ok((false, format!("draw {i} out of bounds")));
        }
    }
    let d = sample_config(&RandomizationBounds::all_disabled(), 3, 0);
    let neutral = d.t2_scale == 1.0
        && d.snr_db.is_none()
        && d.b1.is_none()
        && d.grad_fluct.iter().all(|&g| g == 0.0)
        && d.motion.effective() == MotionSpec::zero();
    Ok((neutral, "1000 draws in range, disabled draw neutral".into()))
}

fn metric_examples() -> Result<(bool, String)> {
    let r = Grid2::filled(4, 4, 25.0);
    let mut x = r.clone();
    x.set(0, 0, 26.0);
    let e = nrmse(&x, &r)?;
    let mut g = Grid2::filled(8, 8, 0.0);
    let roi = Roi::new(1, 1, 2, 2);
    for (a, b) in roi.pixels(8, 8) {
        g.set(a, b, 2.0);
    }
    for (a, b) in roi.ghost_of(8).pixels(8, 8) {
        g.set(a, b, 1.0);
    }
    let q = gsr(&g, &roi, None)?;
    let l = linreg(&[1.0, 2.0, 3.0, 4.0], &[5.0, 7.0, 9.0, 11.0])?;
    let ok = (e - 1.0).abs() < 1e-12 && q == 0.5 && (l.slope - 2.0).abs() < 1e-12 && (l.intercept - 3.0).abs() < 1e-12;
    Ok((ok, format!("nrmse {e:.6}%, gsr {q}, slope {:.3}", l.slope)))
}

fn sequence_programs_valid() -> Result<(bool, String)> {
    let moled = build_se_moled(&Preset::desk().moled_params())?;
    let se = build_se(&SeParams::new(50.0, 3000.0, 64, 22.0))?;
    let mut bad = Vec::new();
    for p in [&moled, &se] {
        let rep = validate_program(p);
        if !rep.is_ok() {
            bad.push(format!("{}: {}", p.meta().name, rep.violations[0]));
        }
        if &from_text(&to_text(p))? != p {
            bad.push(format!("{}: text round trip differs", p.meta().name));
        }
    }
    Ok((bad.is_empty(), if bad.is_empty() { "SE and SE-MOLED valid".into() } else { bad.join("; ") }))
}

fn spin_echo_decay() -> Result<(bool, String)> {
    let p = Preset::desk();
    let t = uniform_templates::<f64>(p.spin_grid, 1.0, 100.0)?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut worst: f64 = 0.0;
    for te in [35.0, 50.0, 70.0, 90.0] {
        let prog = build_se(&SeParams::new(te, 3000.0, p.matrix, p.fov_cm))?;
        let k = simulate(&prog, &t, &NonIdealSet::ideal(), &SimConfig::default())?;
        let img = reconstruct_image(&k)?.magnitude();
        let mean = img.sum() / img.data().len() as f64;
        let want = (-te / 100.0f64).exp();
        worst = worst.max((mean - want).abs() / want);
        xs.push(te);
        ys.push(mean.ln());
    }
    let fit = linreg(&xs, &ys)?;
    let t2 = -1.0 / fit.slope;
    let ok = worst < 0.01 && (t2 - 100.0).abs() < 2.0;
    Ok((ok, format!("max rel err {:.3}%, fitted T2 {t2:.2} ms", 100.0 * worst)))
}

/// Positions of the `n` largest local maxima, at least `sep` apart.
pub fn find_peaks(mag: &Grid2<f64>, n: usize, sep: i64) -> Vec<(i64, i64)> {
    let (rows, cols) = mag.dims();
    let mut order: Vec<(usize, usize)> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).collect();
    order.sort_by(|a, b| mag.get(b.0, b.1).total_cmp(&mag.get(a.0, a.1)));
    let mut out: Vec<(i64, i64)> = Vec::new();
    for (r, c) in order {
        let p = (r as i64, c as i64);
        if out.iter().all(|q| (q.0 - p.0).abs().max((q.1 - p.1).abs()) >= sep) {
            out.push(p);
            if out.len() == n {
                break;
            }
        }
    }
    out
}

fn moled_echo_peaks() -> Result<(bool, String)> {
    let p = Preset::desk();
    let prog = build_se_moled(&p.moled_params())?;
    let t = uniform_templates::<f64>(p.spin_grid, 1.0, 100.0)?;
    let k = simulate(&prog, &t, &NonIdealSet::ideal(), &SimConfig::default())?;
    let found = find_peaks(&k.data.magnitude(), 4, 4);
    let mut worst = 0;
    for want in prog.predicted_peaks() {
        let d = found
            .iter()
            .map(|f| (f.0 - want.0).abs().max((f.1 - want.1).abs()))
            .min()
            .unwrap_or(i64::MAX);
        worst = worst.max(d);
    }
    Ok((worst <= 1, format!("peaks {found:?}, max offset {worst}")))
}

fn motion_neutrality() -> Result<(bool, String)> {
    let p = Preset::desk();
    let prog = build_se_moled(&p.moled_params())?;
    let t = synthetic_head::<f64>(p.spin_grid, 0)?;
    let cfg = SimConfig::default();
    let run = |m: MotionSpec| {
        let ni = NonIdealSet {
            motion: m,
            ..NonIdealSet::ideal()
        };
        simulate(&prog, &t, &ni, &cfg)
    };
    let off = run(MotionSpec::disabled())?;
    let zero = run(MotionSpec::zero())?;
    let severe = run(MotionSpec::severe())?;
    let same = off.data.data().iter().zip(zero.data.data()).all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits());
    let diff: f64 = off.data.data().iter().zip(severe.data.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
    let rel = diff / off.data.energy();
    Ok((same && rel > 0.01, format!("zero==disabled {same}, severe rel energy {rel:.3}")))
}

fn data_consistency() -> Result<(bool, String)> {
    let p = Preset::desk();
    let prog = build_se_moled(&p.moled_params())?;
    let t = synthetic_head::<f64>(p.spin_grid, 1)?;
    let coils = analytic_coils::<f64>(4, p.matrix, 0, 0)?;
    let mask = SamplingMask::uniform(p.matrix, p.matrix, 2, 0)?;
    let pair = forward_parallel_pair(&t, &coils, &mask, &NonIdealSet::ideal(), &prog, &SimConfig::default())?;
    let crate::mriops::LabelData::Coils(labels) = &pair.labels[0].1 else {
        return Ok((false, "missing coil label".into()));
    };
    let mut worst: f64 = 0.0;
    for (x, y) in pair.input.iter().zip(labels) {
        let a = apply_mask(&fft2c(x)?, &mask)?;
        let b = apply_mask(&fft2c(y)?, &mask)?;
        let d: f64 = a.data().iter().zip(b.data()).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
        worst = worst.max(d / b.max_abs());
    }
    Ok((worst < 1e-12, format!("max rel deviation {worst:.1e}")))
}

/// GSR of a zero-filled R=2 image against the fully sampled one, on a
/// uniform disk.
pub fn aliasing_gsr_pair(n: usize) -> Result<(f64, f64)> {
    let t = disk_templates::<f64>(n, 0.4, 1.0, 100.0)?;
    let img = ComplexImage::from_real(t.m0().data(), Domain::Image);
    let mask = SamplingMask::uniform(n, n, 2, 0)?;
    let under = ifft2c(&apply_mask(&fft2c(&img)?, &mask)?)?;
    let roi = Roi::centered(n, n, 0.2);
    Ok((gsr(&img.magnitude(), &roi, None)?, gsr(&under.magnitude(), &roi, None)?))
}

fn aliasing_gsr() -> Result<(bool, String)> {
    let (full, under) = aliasing_gsr_pair(Preset::desk().matrix)?;
    Ok((under > 10.0 * full, format!("fully sampled {full:.2e}, R=2 {under:.3}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_suite_passes() {
        let rep = run_suite(Suite::Analytic);
        assert!(rep.iter().all(|c| c.pass), "{}", format_report(&rep));
    }

    #[test]
    fn peaks_are_separated() {
        let mut g = Grid2::filled(16, 16, 0.0);
        g.set(3, 3, 5.0);
        g.set(3, 4, 4.0);
        g.set(10, 10, 3.0);
        assert_eq!(find_peaks(&g, 2, 2), vec![(3, 3), (10, 10)]);
    }
}
