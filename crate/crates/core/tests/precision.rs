//! The pipeline runs in either precision and the two agree.

use forge_core::bloch::{simulate, SimConfig};
use forge_core::fields::{gen_b1_seeded, MotionSpec, NonIdealSet};
use forge_core::mriops::{fft2c, reconstruct_image};
use forge_core::phantom::synthetic_head;
use forge_core::sequence::{build_se, SeParams};
use forge_core::{ImageF32, Real, TemplatesF32};

fn run<T: Real>() -> Vec<(f64, f64)> {
    let t = synthetic_head::<T>(32, 1).unwrap();
    let prog = build_se(&SeParams::new(40.0, 3000.0, 16, 22.0)).unwrap();
    let ni = NonIdealSet {
        b1: Some(gen_b1_seeded(2, 1, (0.7, 1.2), 32, 32, 4).unwrap()),
        motion: MotionSpec::new(2.0, -1.0, 10.0),
        ..NonIdealSet::ideal()
    };
    let img = reconstruct_image(&simulate(&prog, &t, &ni, &SimConfig::default()).unwrap()).unwrap();
    img.data().iter().map(|z| (z.re.as_f64(), z.im.as_f64())).collect()
}

#[test]
fn f32_tracks_f64() {
    let a = run::<f32>();
    let b = run::<f64>();
    let peak = b.iter().map(|(r, i)| r.hypot(*i)).fold(0.0, f64::max);
    let worst = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x.0 - y.0).hypot(x.1 - y.1))
        .fold(0.0, f64::max);
    assert!(peak > 0.0);
    assert!(worst / peak < 1e-4, "{worst} vs peak {peak}");
}

#[test]
fn aliases_are_single_precision() {
    let t: TemplatesF32 = synthetic_head(16, 0).unwrap();
    let img: ImageF32 = forge_core::grid::ComplexImage::from_real(t.m0().data(), forge_core::grid::Domain::Image);
    let k = fft2c(&img).unwrap();
    assert_eq!(std::mem::size_of_val(&k.data()[0]), 8);
}
