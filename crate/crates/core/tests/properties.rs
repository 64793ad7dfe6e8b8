mod common;

use intrinsic::annotations::{augment_judgments, dilate_points, Point};
use intrinsic::eval::{pr_curve, pr_curve_brute_force, whdr, LabeledScore};
use intrinsic::image::{Decomposition, LinearImage, LogImage, Mask};
use intrinsic::io::{encode_pfm, parse_pfm};
use intrinsic::losses::{reconstruction_loss, si_mse};
use intrinsic::tonemap::{tonemap, ToneMapParams};
use proptest::prelude::*;

fn with_garbage(img: &LogImage, mask: &Mask, value: f64) -> LogImage {
    let ch = img.channels();
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(k, &v)| if mask.at(k / ch) { v } else { value })
        .collect();
    LogImage::new(img.width(), img.height(), ch, data, mask.clone()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_ignore_invalid_pixels(seed in 0u64..1000, holes in proptest::collection::vec(0usize..64, 1..10), junk in -50.0f64..50.0) {
        let inst = common::Instance::random(seed, 8, 8);
        let mut mask = Mask::filled(8, 8, true);
        for &h in &holes {
            mask.set_index(h, false);
        }
        let a = Decomposition::new(with_garbage(&inst.pred.log_r, &mask, 0.0), with_garbage(&inst.pred.log_s, &mask, 0.0)).unwrap();
        let b = Decomposition::new(with_garbage(&inst.pred.log_r, &mask, junk), with_garbage(&inst.pred.log_s, &mask, -junk)).unwrap();
        let (va, vb) = (si_mse(&a, &inst.gt_r, &inst.gt_s).unwrap(), si_mse(&b, &inst.gt_r, &inst.gt_s).unwrap());
        prop_assert_eq!(va.value, vb.value);
        let (ra, rb) = (reconstruction_loss(&a, &inst.image).unwrap(), reconstruction_loss(&b, &inst.image).unwrap());
        prop_assert_eq!(ra.value, rb.value);
        for &h in &holes {
            prop_assert_eq!(rb.grad_log_s[h], 0.0);
        }
    }

    #[test]
    fn whdr_is_a_rate(seed in 0u64..1000, n in 1usize..50) {
        let mut rng = common::rng(seed);
        let r = common::random_log(&mut rng, 7, 5, 3, -3.0, 0.0);
        let pairs = common::random_judgments(&mut rng, 7, 5, n);
        let v = whdr(&r, &pairs, 0.1).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn ap_survives_monotone_rescoring(
        samples in proptest::collection::vec((0.0f64..5.0, any::<bool>(), 0.1f64..3.0), 2..60),
        gain in 0.1f64..10.0,
    ) {
        prop_assume!(samples.iter().any(|s| s.1));
        let make = |f: &dyn Fn(f64) -> f64| -> Vec<LabeledScore> {
            samples.iter().map(|&(score, positive, weight)| LabeledScore { score: f(score), positive, weight }).collect()
        };
        let base = pr_curve(&make(&|s| s)).unwrap();
        let moved = pr_curve(&make(&|s| (gain * s).exp())).unwrap();
        prop_assert!((base.ap - moved.ap).abs() < 1e-12);
        let brute = pr_curve_brute_force(&make(&|s| s)).unwrap();
        prop_assert!((base.ap - brute.ap).abs() < 1e-12);
        prop_assert!(base.ap >= 0.0 && base.ap <= 1.0 + 1e-12);
    }

    #[test]
    fn tonemap_output_is_bounded(values in proptest::collection::vec(1e-6f64..1e6, 30)) {
        let img = LinearImage::new(10, 3, 1, values, Mask::filled(10, 3, true)).unwrap();
        let out = tonemap(&img, &ToneMapParams::default()).unwrap();
        prop_assert!(out.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(out.saturated_fraction <= 0.1);
    }

    #[test]
    fn pfm_round_trips_single_precision(values in proptest::collection::vec(0.0f32..1e30, 12)) {
        let data: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let img = LinearImage::new(2, 2, 3, data, Mask::filled(2, 2, true)).unwrap();
        let back = parse_pfm(&encode_pfm(&img).unwrap()).unwrap();
        prop_assert_eq!(back.data(), img.data());
    }

    #[test]
    fn augmentation_is_idempotent(seed in 0u64..1000, n in 1usize..15) {
        let mut rng = common::rng(seed);
        let once = augment_judgments(&common::random_judgments(&mut rng, 4, 4, n));
        prop_assert_eq!(augment_judgments(&once), once);
    }

    #[test]
    fn dilation_stays_within_radius(x in 0usize..30, y in 0usize..20, r in 0.0f64..7.0) {
        let m = dilate_points(&[Point::new(x, y)], r, 30, 20);
        prop_assert!(m.get(x, y));
        for i in m.indices() {
            let (dx, dy) = ((i % 30) as f64 - x as f64, (i / 30) as f64 - y as f64);
            prop_assert!(dx * dx + dy * dy <= r * r);
        }
    }
}
