//! Domain randomization: bounded draws of every non-ideal factor, template
//! and coil pairing, all keyed by `(master seed, sample index)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::fields::{B1FieldSpec, MotionSpec, NoiseSpec, B1_BOUNDS};
use crate::grid::Grid2;
use crate::num::Real;
use crate::phantom::{Flip, MapKind, ParametricMap, ParametricTemplateSet, Rotation, T2_MAX_MS};
use crate::rng::{self, StreamTag};

/// Number of echo-shift lobes a draw carries fluctuations for (two axes per
/// excitation, four excitations).
pub const GRAD_FLUCT_SLOTS: usize = 8;

/// Sampling ranges and enable flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationBounds {
    /// Range of finite SNR values, dB.
    pub snr_db: (f64, f64),
    /// Probability of drawing a noiseless (infinite SNR) sample.
    pub noiseless_prob: f64,
    pub grad_fluct: (f64, f64),
    /// Normalization range of the B1+ multiplier.
    pub b1: (f64, f64),
    pub v_ro: (f64, f64),
    pub v_pe: (f64, f64),
    pub omega: (f64, f64),
    pub t2_scale: (f64, f64),
    pub b1_poly_order: usize,
    pub b1_num_gaussians: usize,
    pub enable_snr: bool,
    pub enable_grad_fluct: bool,
    pub enable_b1: bool,
    pub enable_v_ro: bool,
    pub enable_v_pe: bool,
    pub enable_omega: bool,
    pub enable_t2_scale: bool,
    pub enable_augment: bool,
}

impl Default for RandomizationBounds {
    fn default() -> Self {
        Self {
            snr_db: (30.0, 60.0),
            noiseless_prob: 0.1,
            grad_fluct: (-0.05, 0.05),
            b1: B1_BOUNDS,
            v_ro: (-10.0, 10.0),
            v_pe: (-10.0, 10.0),
            omega: (-50.0, 50.0),
            t2_scale: (0.7, 1.3),
            b1_poly_order: 2,
            b1_num_gaussians: 1,
            enable_snr: true,
            enable_grad_fluct: true,
            enable_b1: true,
            enable_v_ro: true,
            enable_v_pe: true,
            enable_omega: true,
            enable_t2_scale: true,
            enable_augment: true,
        }
    }
}

impl RandomizationBounds {
    /// Every parameter pinned to its neutral value.
    pub fn all_disabled() -> Self {
        Self {
            enable_snr: false,
            enable_grad_fluct: false,
            enable_b1: false,
            enable_v_ro: false,
            enable_v_pe: false,
            enable_omega: false,
            enable_t2_scale: false,
            enable_augment: false,
            ..Self::default()
        }
    }

    fn ranges(&self) -> [(&'static str, (f64, f64)); 8] {
        [
            ("snr_db", self.snr_db),
            ("grad_fluct", self.grad_fluct),
            ("b1", self.b1),
            ("v_ro", self.v_ro),
            ("v_pe", self.v_pe),
            ("omega", self.omega),
            ("t2_scale", self.t2_scale),
            ("noiseless_prob", (self.noiseless_prob, self.noiseless_prob)),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in self.ranges() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(ForgeError::invalid(format!("{name}: need finite lo <= hi, got [{lo}, {hi}]")));
            }
        }
        if !(0.0..=1.0).contains(&self.noiseless_prob) {
            return Err(ForgeError::invalid("noiseless_prob must be in [0, 1]"));
        }
        if self.t2_scale.0 < 0.0 {
            return Err(ForgeError::invalid("t2_scale must be non-negative"));
        }
        if self.b1.0 < 0.0 || (self.enable_b1 && self.b1.0 >= self.b1.1) {
            return Err(ForgeError::invalid("b1 needs 0 <= lo < hi"));
        }
        Ok(())
    }

    /// Parses `key = [lo, hi]` / `key = value` lines; `#` starts a comment.
    /// Keys not mentioned keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut b = Self::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ForgeError::Config {
                line,
                msg: format!("expected 'key = value', got '{content}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let err = |msg: String| ForgeError::Config { line, msg };
            let range = || -> Result<(f64, f64)> {
                let inner = value
                    .strip_prefix('[')
                    .and_then(|v| v.strip_suffix(']'))
                    .ok_or_else(|| err(format!("{key}: expected [lo, hi]")))?;
                let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(err(format!("{key}: expected two values")));
                }
                let p = |s: &str| s.parse::<f64>().map_err(|_| err(format!("{key}: bad number '{s}'")));
                Ok((p(parts[0])?, p(parts[1])?))
            };
            let flag = || -> Result<bool> {
                match value {
                    "true" => Ok(true),
                    "false" => Ok(false),
                    _ => Err(err(format!("{key}: expected true or false"))),
                }
            };
            let int = || value.parse::<usize>().map_err(|_| err(format!("{key}: expected an integer")));
            match key {
                "snr_db" => b.snr_db = range()?,
                "grad_fluct" => b.grad_fluct = range()?,
                "b1" => b.b1 = range()?,
                "v_ro" => b.v_ro = range()?,
                "v_pe" => b.v_pe = range()?,
                "omega" => b.omega = range()?,
                "t2_scale" => b.t2_scale = range()?,
                "noiseless_prob" => {
                    b.noiseless_prob = value
                        .parse()
                        .map_err(|_| err(format!("{key}: expected a number")))?
                }
                "b1_poly_order" => b.b1_poly_order = int()?,
                "b1_num_gaussians" => b.b1_num_gaussians = int()?,
                "enable_snr" => b.enable_snr = flag()?,
                "enable_grad_fluct" => b.enable_grad_fluct = flag()?,
                "enable_b1" => b.enable_b1 = flag()?,
                "enable_v_ro" => b.enable_v_ro = flag()?,
                "enable_v_pe" => b.enable_v_pe = flag()?,
                "enable_omega" => b.enable_omega = flag()?,
                "enable_t2_scale" => b.enable_t2_scale = flag()?,
                "enable_augment" => b.enable_augment = flag()?,
                _ => return Err(err(format!("unknown key '{key}'"))),
            }
        }
        b.validate()?;
        Ok(b)
    }

    /// Text form accepted by [`RandomizationBounds::parse`].
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        for (name, (lo, hi)) in self.ranges().into_iter().take(7) {
            let _ = writeln!(s, "{name} = [{lo}, {hi}]");
        }
        let _ = writeln!(s, "noiseless_prob = {}", self.noiseless_prob);
        let _ = writeln!(s, "b1_poly_order = {}", self.b1_poly_order);
        let _ = writeln!(s, "b1_num_gaussians = {}", self.b1_num_gaussians);
        for (k, v) in [
            ("enable_snr", self.enable_snr),
            ("enable_grad_fluct", self.enable_grad_fluct),
            ("enable_b1", self.enable_b1),
            ("enable_v_ro", self.enable_v_ro),
            ("enable_v_pe", self.enable_v_pe),
            ("enable_omega", self.enable_omega),
            ("enable_t2_scale", self.enable_t2_scale),
            ("enable_augment", self.enable_augment),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Concrete parameter values for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationDraw {
    pub seed: u64,
    pub index: u64,
    pub t2_scale: f64,
    /// `None` is a noiseless sample.
    pub snr_db: Option<f64>,
    pub noise_seed: u64,
    pub grad_fluct: Vec<f64>,
    /// `None` is a perfect transmit field.
    pub b1: Option<B1FieldSpec>,
    pub motion: MotionSpec,
    pub rotation: Rotation,
    pub flip: Flip,
    pub template_id: usize,
    pub coil_set_id: usize,
}

impl RandomizationDraw {
    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            snr_db: self.snr_db,
            seed: self.noise_seed,
        }
    }
}

fn draw_range(seed: u64, index: u64, tag: StreamTag, enabled: bool, (lo, hi): (f64, f64), neutral: f64) -> f64 {
    if !enabled {
        return neutral;
    }
    rng::uniform(&mut rng::stream(seed, index, tag), lo, hi)
}

/// Independent uniform draw of every parameter. Pool ids are left at 0; see
/// [`pair_template_coils`].
pub fn sample_config(bounds: &RandomizationBounds, seed: u64, index: u64) -> RandomizationDraw {
    let snr_db = if bounds.enable_snr {
        let mut r = rng::stream(seed, index, StreamTag::Noiseless);
        let u: f64 = rand::Rng::random(&mut r);
        if u < bounds.noiseless_prob {
            None
        } else {
            Some(draw_range(seed, index, StreamTag::Snr, true, bounds.snr_db, 0.0))
        }
    } else {
        None
    };
    let noise_seed = rand::Rng::random(&mut rng::stream(seed, index, StreamTag::NoiseSeed));
    let grad_fluct = if bounds.enable_grad_fluct {
        let mut r = rng::stream(seed, index, StreamTag::GradFluct);
        (0..GRAD_FLUCT_SLOTS)
            .map(|_| rng::uniform(&mut r, bounds.grad_fluct.0, bounds.grad_fluct.1))
            .collect()
    } else {
        vec![0.0; GRAD_FLUCT_SLOTS]
    };
    let b1 = bounds
        .enable_b1
        .then(|| B1FieldSpec::random(bounds.b1_poly_order, bounds.b1_num_gaussians, bounds.b1, seed, index));
    let mut mr = rng::stream(seed, index, StreamTag::Motion);
    let mut m = |enabled: bool, (lo, hi): (f64, f64)| {
        // Always consume the draw so enabling one axis never shifts another.
        let v = rng::uniform(&mut mr, lo, hi);
        if enabled {
            v
        } else {
            0.0
        }
    };
    let v_ro = m(bounds.enable_v_ro, bounds.v_ro);
    let v_pe = m(bounds.enable_v_pe, bounds.v_pe);
    let omega = m(bounds.enable_omega, bounds.omega);
    let motion = MotionSpec::new(v_ro, v_pe, omega);
    let (rotation, flip) = if bounds.enable_augment {
        let mut r = rng::stream(seed, index, StreamTag::Augment);
        (
            Rotation::ALL[rng::index_below(&mut r, 4)],
            Flip::ALL[rng::index_below(&mut r, 3)],
        )
    } else {
        (Rotation::R0, Flip::None)
    };
    RandomizationDraw {
        seed,
        index,
        t2_scale: draw_range(seed, index, StreamTag::T2Scale, bounds.enable_t2_scale, bounds.t2_scale, 1.0),
        snr_db,
        noise_seed,
        grad_fluct,
        b1,
        motion,
        rotation,
        flip,
        template_id: 0,
        coil_set_id: 0,
    }
}

/// Uniform independent choice of a template and a coil set.
pub fn pair_template_coils(num_templates: usize, num_coil_sets: usize, seed: u64, index: u64) -> Result<(usize, usize)> {
    if num_templates == 0 {
        return Err(ForgeError::EmptyPool("templates"));
    }
    if num_coil_sets == 0 {
        return Err(ForgeError::EmptyPool("coil sets"));
    }
    let t = rng::index_below(&mut rng::stream(seed, index, StreamTag::Template), num_templates);
    let c = rng::index_below(&mut rng::stream(seed, index, StreamTag::Coil), num_coil_sets);
    Ok((t, c))
}

/// Draw with pool ids filled in.
pub fn sample_with_pools(
    bounds: &RandomizationBounds,
    seed: u64,
    index: u64,
    num_templates: usize,
    num_coil_sets: usize,
) -> Result<RandomizationDraw> {
    let mut d = sample_config(bounds, seed, index);
    (d.template_id, d.coil_set_id) = pair_template_coils(num_templates, num_coil_sets, seed, index)?;
    Ok(d)
}

/// T2 map multiplied by `scale` and clamped to the template range.
pub fn scale_t2_distribution<T: Real>(set: &ParametricTemplateSet<T>, scale: f64) -> Result<ParametricTemplateSet<T>> {
    if scale == 1.0 {
        return Ok(set.clone());
    }
    let s = T::lit(scale);
    let hi = T::lit(T2_MAX_MS);
    let g: Grid2<T> = set.t2().data().map(|v| (v * s).max(T::zero()).min(hi));
    set.with_t2_map(ParametricMap::new(MapKind::T2, g)?, &format!("t2x{scale}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::uniform_templates;

    #[test]
    fn draws_respect_bounds() {
        let b = RandomizationBounds::default();
        let mut noiseless = 0;
        for i in 0..2000 {
            let d = sample_config(&b, 11, i);
            match d.snr_db {
                Some(s) => assert!((30.0..=60.0).contains(&s)),
                None => noiseless += 1,
            }
            assert!(d.grad_fluct.iter().all(|g| (-0.05..=0.05).contains(g)));
            assert!((-10.0..=10.0).contains(&d.motion.v_ro));
            assert!((-10.0..=10.0).contains(&d.motion.v_pe));
            assert!((-50.0..=50.0).contains(&d.motion.omega_deg_s));
            assert!((0.7..=1.3).contains(&d.t2_scale));
        }
        assert!((100..300).contains(&noiseless), "{noiseless}");
    }

    #[test]
    fn degenerate_range_is_constant() {
        let b = RandomizationBounds {
            v_ro: (3.0, 3.0),
            t2_scale: (0.9, 0.9),
            ..Default::default()
        };
        for i in 0..50 {
            let d = sample_config(&b, 2, i);
            assert_eq!(d.motion.v_ro, 3.0);
            assert_eq!(d.t2_scale, 0.9);
        }
    }

    #[test]
    fn deterministic_and_index_sensitive() {
        let b = RandomizationBounds::default();
        assert_eq!(sample_config(&b, 5, 9), sample_config(&b, 5, 9));
        assert_ne!(sample_config(&b, 5, 9), sample_config(&b, 5, 10));
    }

    #[test]
    fn disabled_is_neutral() {
        let d = sample_config(&RandomizationBounds::all_disabled(), 5, 3);
        assert_eq!(d.snr_db, None);
        assert!(d.grad_fluct.iter().all(|&g| g == 0.0));
        assert_eq!(d.b1, None);
        assert_eq!(d.motion, MotionSpec::zero());
        assert_eq!(d.t2_scale, 1.0);
        assert_eq!((d.rotation, d.flip), (Rotation::R0, Flip::None));
    }

    #[test]
    fn disabling_one_axis_keeps_the_others() {
        let b = RandomizationBounds::default();
        let nb = RandomizationBounds {
            enable_v_ro: false,
            ..b.clone()
        };
        let (d, e) = (sample_config(&b, 1, 1), sample_config(&nb, 1, 1));
        assert_eq!(e.motion.v_ro, 0.0);
        assert_eq!(d.motion.v_pe, e.motion.v_pe);
        assert_eq!(d.motion.omega_deg_s, e.motion.omega_deg_s);
    }

    #[test]
    fn pairing() {
        assert_eq!(pair_template_coils(1, 1, 3, 4).unwrap(), (0, 0));
        assert!(matches!(pair_template_coils(0, 1, 3, 4), Err(ForgeError::EmptyPool(_))));
        assert_eq!(pair_template_coils(7, 5, 3, 4).unwrap(), pair_template_coils(7, 5, 3, 4).unwrap());
    }

    #[test]
    fn t2_scaling() {
        let t = uniform_templates::<f64>(4, 1.0, 400.0).unwrap();
        assert_eq!(scale_t2_distribution(&t, 1.0).unwrap(), t);
        let s = scale_t2_distribution(&t, 2.0).unwrap();
        assert!(s.t2().data().data().iter().all(|&v| v == 650.0));
        let t = uniform_templates::<f64>(4, 1.0, 100.0).unwrap();
        let s = scale_t2_distribution(&t, 0.5).unwrap();
        assert!(s.t2().data().data().iter().all(|&v| v == 50.0));
    }

    #[test]
    fn config_round_trip() {
        let text = "# bounds\nsnr_db = [35, 50]\nv_ro = [-2.5, 2.5]  # narrow\nenable_b1 = false\n";
        let b = RandomizationBounds::parse(text).unwrap();
        assert_eq!(b.snr_db, (35.0, 50.0));
        assert_eq!(b.v_ro, (-2.5, 2.5));
        assert!(!b.enable_b1);
        assert_eq!(RandomizationBounds::parse(&b.to_config_text()).unwrap(), b);
        assert!(matches!(
            RandomizationBounds::parse("bogus = 1"),
            Err(ForgeError::Config { line: 1, .. })
        ));
        assert!(RandomizationBounds::parse("v_pe = [3, 1]").is_err());
    }
}
