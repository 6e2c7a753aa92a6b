use num_complex::Complex;
use proptest::prelude::*;

use forge_core::container::{decode, encode_images, encode_real, Meta, MsdData};
use forge_core::fields::{gen_velocity_field, MotionSpec};
use forge_core::grid::{ComplexImage, Domain, Grid2};
use forge_core::metrics::{gsr, nrmse, Roi};
use forge_core::mriops::{apply_mask, fft2c, ifft2c, SamplingMask};
use forge_core::randomize::{sample_config, RandomizationBounds};
use forge_core::sequence::{build_se, from_text, to_text, validate_program, SeParams};

fn grid(n: usize) -> impl Strategy<Value = Grid2<f64>> {
    prop::collection::vec(-1e3f64..1e3, n * n).prop_map(move |v| Grid2::new(n, n, v).unwrap())
}

fn image(n: usize, domain: Domain) -> impl Strategy<Value = ComplexImage<f64>> {
    prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), n * n)
        .prop_map(move |v| ComplexImage::new(n, n, domain, v.into_iter().map(|(a, b)| Complex::new(a, b)).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn real_container_round_trip(v in prop::collection::vec(any::<f32>(), 1..200)) {
        let bytes = encode_real(&[v.len()], &v, &Meta::new()).unwrap();
        let MsdData::F32(back) = decode(&bytes).unwrap().data else { panic!("dtype") };
        prop_assert!(back.iter().zip(&v).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn complex_container_round_trip(img in image(6, Domain::KSpace)) {
        let bytes = encode_images(std::slice::from_ref(&img), &Meta::new()).unwrap();
        let back = decode(&bytes).unwrap().to_complex_images::<f64>().unwrap();
        prop_assert_eq!(&back[0], &img);
    }

    #[test]
    fn fft_round_trip(img in image(8, Domain::Image)) {
        let back = ifft2c(&fft2c(&img).unwrap()).unwrap();
        let scale = img.max_abs().max(1.0);
        for (a, b) in back.data().iter().zip(img.data()) {
            prop_assert!((a - b).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn mask_idempotent(k in image(8, Domain::KSpace), r in prop::sample::select(vec![1usize, 2, 4, 8]), off in 0usize..8) {
        prop_assume!(off < r);
        let m = SamplingMask::uniform(8, 8, r, off).unwrap();
        let once = apply_mask(&k, &m).unwrap();
        prop_assert_eq!(apply_mask(&once, &m).unwrap(), once);
    }

    #[test]
    fn nrmse_is_scale_invariant(x in grid(5), r in grid(5), s in 0.01f64..100.0) {
        prop_assume!(r.data().iter().any(|v| *v != 0.0));
        let a = nrmse(&x, &r).unwrap();
        let b = nrmse(&x.map(|v| v * s), &r.map(|v| v * s)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn gsr_is_scale_invariant(g in grid(8), s in 0.01f64..100.0) {
        let g = g.map(f64::abs);
        let roi = Roi::new(1, 1, 2, 3);
        if let Ok(a) = gsr(&g, &roi, None) {
            let b = gsr(&g.map(|v| v * s), &roi, None).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn velocity_field_mean_is_translation(v_ro in -10.0f64..10.0, v_pe in -10.0f64..10.0, w in -50.0f64..50.0) {
        // Rotation about the FOV center averages to zero over a symmetric grid.
        let f = gen_velocity_field::<f64>(&MotionSpec::new(v_ro, v_pe, w), 16, 16, 22.0).unwrap();
        let n = 256.0;
        prop_assert!((f.v_ro.sum() / n - v_ro).abs() < 1e-9);
        prop_assert!((f.v_pe.sum() / n - v_pe).abs() < 1e-9);
    }

    #[test]
    fn draws_are_pure(seed in any::<u64>(), index in any::<u64>()) {
        let b = RandomizationBounds::default();
        prop_assert_eq!(sample_config(&b, seed, index), sample_config(&b, seed, index));
    }

    #[test]
    fn se_programs_are_valid(te in 20.0f64..150.0, m in 2usize..5) {
        let matrix = 16 * m;
        let p = build_se(&SeParams::new(te, 3000.0, matrix, 22.0)).unwrap();
        prop_assert!(validate_program(&p).is_ok());
        prop_assert!((p.kspace_center_time().unwrap() - te).abs() < 1e-9);
        prop_assert_eq!(from_text(&to_text(&p)).unwrap(), p);
    }
}
