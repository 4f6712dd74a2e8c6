//! Algebraic invariants of the slot engine, transforms and layers.

use num_complex::Complex64;
use proptest::prelude::*;

use fhenav::hft::{apply_hft, build_plan, build_plan_embedded, transpose_grid, CipherGrid, Direction};
use fhenav::layers::{apply_stride, conv2d_freq, ActivationSpec, ConvKernel, ConvSpec, SpectralGeometry, RELU_DEAD_BAND};
use fhenav::slot_engine::{rotate_sum, Backend, KeySet, RotSumMode, SimConfig, SimEngine, SlotVec};

const SLOTS: usize = 32;
const TOL: f64 = 1e-9;

fn engine(slots: usize) -> SimEngine {
    SimEngine::new(KeySet::with_all_rotations(5, slots).unwrap(), SimConfig::default())
}

fn reals(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, n)
}

fn complexes(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| Complex64::new(a, b)), n)
}

fn enc(e: &SimEngine, v: &[f64]) -> <SimEngine as Backend>::Ciphertext {
    e.encrypt(&SlotVec::from_real(v).unwrap()).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn norm(v: &SlotVec) -> f64 {
    v.as_slice().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ops_commute_with_decryption(a in reals(SLOTS), b in reals(SLOTS), k in -2.0..2.0f64) {
        let e = engine(SLOTS);
        let (ca, cb) = (enc(&e, &a), enc(&e, &b));
        let pb = SlotVec::from_real(&b).unwrap();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let scaled: Vec<f64> = a.iter().map(|x| k * x).collect();
        let dec = |c| e.decrypt(&c).unwrap().real_parts();
        prop_assert!(max_diff(&dec(e.add(&ca, &cb).unwrap()), &sum) < TOL);
        prop_assert!(max_diff(&dec(e.sub(&ca, &cb).unwrap()), &diff) < TOL);
        prop_assert!(max_diff(&dec(e.add_plain(&ca, &pb).unwrap()), &sum) < TOL);
        prop_assert!(max_diff(&dec(e.mult_ct(&ca, &cb).unwrap()), &prod) < TOL);
        prop_assert!(max_diff(&dec(e.mult_pt(&ca, &pb).unwrap()), &prod) < TOL);
        prop_assert!(max_diff(&dec(e.mult_scalar(&ca, k).unwrap()), &scaled) < TOL);
    }

    #[test]
    fn rotations_compose_additively(a in reals(SLOTS), r in 0..SLOTS, s in 0..SLOTS) {
        let e = engine(SLOTS);
        let c = enc(&e, &a);
        let twice = e.rotate_left(&e.rotate_left(&c, r).unwrap(), s).unwrap();
        let once = e.rotate_left(&c, (r + s) % SLOTS).unwrap();
        prop_assert_eq!(e.decrypt(&twice).unwrap(), e.decrypt(&once).unwrap());
        let back = e.rotate_right(&e.rotate_left(&c, r).unwrap(), r).unwrap();
        prop_assert_eq!(e.decrypt(&back).unwrap().real_parts(), a.clone());
        let got = e.decrypt(&e.rotate_left(&c, r).unwrap()).unwrap().real_parts();
        for i in 0..SLOTS {
            prop_assert_eq!(got[i], a[(i + r) % SLOTS]);
        }
    }

    #[test]
    fn hft_is_linear_and_unitary(x in complexes(SLOTS), y in complexes(SLOTS), k in -2.0..2.0f64) {
        let e = engine(SLOTS);
        let plan = build_plan(SLOTS, Direction::Forward).unwrap();
        let t = |v: &[Complex64]| {
            e.decrypt(&apply_hft(&e, &e.encrypt(&SlotVec::new(v.to_vec()).unwrap()).unwrap(), &plan).unwrap()).unwrap()
        };
        let combo: Vec<Complex64> = x.iter().zip(&y).map(|(a, b)| a * k + b).collect();
        let want = t(&x).scaled(Complex64::new(k, 0.0)).plus(&t(&y));
        prop_assert!(t(&combo).max_abs_diff(&want) < TOL);
        let xv = SlotVec::new(x.clone()).unwrap();
        prop_assert!((norm(&t(&x)) - norm(&xv)).abs() < TOL);
    }

    #[test]
    fn inverse_undoes_forward(x in complexes(16), log_n in 1u32..=4) {
        let n = 1usize << log_n;
        let e = engine(16);
        let mut padded = x.clone();
        padded[n..].iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        let fwd = build_plan_embedded(n, 16, Direction::Forward).unwrap();
        let inv = build_plan_embedded(n, 16, Direction::Inverse).unwrap();
        let c = e.encrypt(&SlotVec::new(padded.clone()).unwrap()).unwrap();
        let back = e.decrypt(&apply_hft(&e, &apply_hft(&e, &c, &fwd).unwrap(), &inv).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&SlotVec::new(padded).unwrap()) < TOL);
    }

    #[test]
    fn masks_are_idempotent(a in reals(SLOTS), lo in 0..SLOTS, len in 1..SLOTS) {
        let e = engine(SLOTS);
        let mask = SlotVec::mask(SLOTS, lo..(lo + len).min(SLOTS)).unwrap();
        let once = e.mult_pt(&enc(&e, &a), &mask).unwrap();
        let twice = e.mult_pt(&once, &mask).unwrap();
        prop_assert_eq!(e.decrypt(&once).unwrap(), e.decrypt(&twice).unwrap());
    }

    #[test]
    fn transpose_is_an_involution(rows in 1usize..8, cols in 1usize..8, seed in reals(64)) {
        let e = engine(8);
        let m: Vec<Vec<f64>> = (0..rows).map(|i| seed[i * 8..i * 8 + cols].to_vec()).collect();
        let g = CipherGrid::encrypt(&e, &m, 8).unwrap();
        let t = transpose_grid(&e, &g).unwrap();
        let tm = t.decrypt(&e).unwrap();
        for i in 0..rows {
            for j in 0..cols {
                prop_assert_eq!(tm[j][i], m[i][j]);
            }
        }
        prop_assert_eq!(transpose_grid(&e, &t).unwrap().decrypt(&e).unwrap(), m);
    }

    #[test]
    fn rotate_sum_totals_the_prefix(a in reals(SLOTS), n in 1usize..=SLOTS) {
        let e = engine(SLOTS);
        let c = enc(&e, &a);
        let want: f64 = a[..n].iter().sum();
        let before = e.meter().snapshot();
        let naive = e.decrypt(&rotate_sum(&e, &c, n, RotSumMode::Naive).unwrap()).unwrap();
        prop_assert_eq!(e.meter().snapshot().since(&before).rotate as usize, n - 1);
        prop_assert!((naive.as_slice()[0].re - want).abs() < TOL);
        if n.is_power_of_two() {
            let before = e.meter().snapshot();
            let tree = e.decrypt(&rotate_sum(&e, &c, n, RotSumMode::Tree).unwrap()).unwrap();
            prop_assert_eq!(e.meter().snapshot().since(&before).rotate, u64::from(n.trailing_zeros()));
            prop_assert!((tree.as_slice()[0].re - want).abs() < TOL);
        }
    }

    #[test]
    fn relu_approx_tracks_relu_outside_dead_band(x in -1.0..1.0f64, scale in 0.1..10.0f64) {
        prop_assume!(x.abs() >= RELU_DEAD_BAND);
        let spec = ActivationSpec::relu(scale);
        let v = x * scale;
        prop_assert!((spec.approx(v) - v.max(0.0)).abs() <= 0.01 * scale);
    }

    #[test]
    fn tanh_poly_is_odd(x in -2.0..2.0f64) {
        let spec = ActivationSpec::tanh(1.0);
        prop_assert!((spec.approx(x) + spec.approx(-x)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn strided_conv_is_linear_in_the_image(
        img_a in reals(100),
        img_b in reals(100),
        filter in reals(9),
        k in -2.0..2.0f64,
        stride in 1usize..=2,
    ) {
        let geometry = SpectralGeometry::new(16, 16).unwrap();
        let e = engine(16);
        let spec = ConvSpec { kernel: 3, stride, pad: 1, filters: vec![vec![filter]], bias: vec![0.0] };
        let kernel = ConvKernel::new(spec, &geometry).unwrap();
        let conv = |img: &[f64]| {
            let rows: Vec<Vec<f64>> = img.chunks(10).map(<[f64]>::to_vec).collect();
            let g = CipherGrid::encrypt(&e, &rows, 16).unwrap();
            let out = conv2d_freq(&e, &geometry, &[g], &kernel).unwrap();
            apply_stride(&e, &out[0], stride, 1).unwrap().decrypt(&e).unwrap().concat()
        };
        let combo: Vec<f64> = img_a.iter().zip(&img_b).map(|(a, b)| k * a + b).collect();
        let want: Vec<f64> = conv(&img_a).iter().zip(conv(&img_b)).map(|(a, b)| k * a + b).collect();
        prop_assert!(max_diff(&conv(&combo), &want) < 1e-9);
    }
}
