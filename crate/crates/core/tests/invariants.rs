use palette_core::autodiff::attention_probs;
use palette_core::diffusion::{estimate_y0, forward_marginal, posterior_coefficients};
use palette_core::metrics::{
    frechet_distance, inception_score, ms_ssim, per_input_feature_diversity, ClassifierConfig, FeatureStats, SmallClassifier,
    SsimConfig,
};
use palette_core::panorama::{panorama_width, Direction, PanoramaConfig};
use palette_core::tasks::{
    gen_freeform_mask, gen_rect_masks, make_inpainting_sample, to_grayscale, uncrop_all_sides_mask, uncrop_side_mask,
    BrushParams, Side,
};
use palette_core::{ImageTensor, NoiseSchedule, RandomSource, Shape4};
use proptest::prelude::*;

fn image(seed: u64, shape: Shape4) -> ImageTensor<f64> {
    ImageTensor::randn(shape, &mut RandomSource::seed_from_u64(seed)).clamp(-1.0, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gammas_follow_the_alpha_recursion(start in 1e-7f64..1e-3, span in 1e-4f64..0.2, steps in 1usize..3000) {
        let s = NoiseSchedule::linear(start, start + span, steps).unwrap();
        prop_assert_eq!(s.gamma(0), 1.0);
        for t in 1..=steps {
            let g = s.gamma(t);
            prop_assert!(g > 0.0 && g <= s.gamma(t - 1));
            let rhs = s.gamma(t - 1) * s.alpha(t);
            prop_assert!((g - rhs).abs() <= 1e-12 * g);
        }
    }

    #[test]
    fn posterior_is_the_product_of_gaussians(g_prev in 0.001f64..0.9999, beta in 1e-5f64..0.5, y0 in -1.0f64..1.0, yt in -4.0f64..4.0) {
        let s = NoiseSchedule::from_betas(vec![1.0 - g_prev, beta]).unwrap();
        let c = posterior_coefficients(&s, 2).unwrap();
        let (a, gp) = (s.alpha(2), s.gamma(1));
        let precision = 1.0 / (1.0 - gp) + a / (1.0 - a);
        let mean = (gp.sqrt() * y0 / (1.0 - gp) + a.sqrt() * yt / (1.0 - a)) / precision;
        prop_assert!((c.y0 * y0 + c.y_t * yt - mean).abs() < 1e-9);
        prop_assert!((c.variance - 1.0 / precision).abs() < 1e-12);
    }

    #[test]
    fn y0_estimate_inverts_the_marginal(seed in any::<u64>(), g in 1e-3f64..=1.0) {
        let shape = Shape4::new(1, 3, 4, 4);
        let y0 = image(seed, shape);
        let eps = ImageTensor::randn(shape, &mut RandomSource::seed_from_u64(seed ^ 1));
        let yt = forward_marginal(&y0, g, &eps).unwrap();
        prop_assert!(estimate_y0(&yt, &eps, g).unwrap().max_abs_diff(&y0).unwrap() < 1e-9);
    }

    #[test]
    fn rect_masks_stay_in_band(seed in any::<u64>(), h in 8usize..64, w in 8usize..64) {
        let r = gen_rect_masks(h, w, &mut RandomSource::seed_from_u64(seed)).unwrap();
        prop_assert!((1..=5).contains(&r.rects.len()));
        prop_assert!((0.10..=0.40).contains(&r.mask.area_fraction()));
    }

    #[test]
    fn freeform_masks_are_binary_and_nonempty(seed in any::<u64>(), h in 8usize..48, w in 8usize..48) {
        let m = gen_freeform_mask(h, w, &BrushParams::default(), &mut RandomSource::seed_from_u64(seed)).unwrap();
        prop_assert!(m.data().iter().all(|&v| v <= 1));
        prop_assert!(m.count() > 0);
    }

    #[test]
    fn uncrop_masks_partition_the_image(hh in 2usize..32, hw in 2usize..32) {
        let (h, w) = (2 * hh, 2 * hw);
        for side in Side::ALL {
            let m = uncrop_side_mask(h, w, side).unwrap();
            prop_assert_eq!(m.area_fraction(), 0.5);
            let c = m.complement();
            prop_assert!(m.data().iter().zip(c.data()).all(|(a, b)| a + b == 1));
        }
        let all = uncrop_all_sides_mask(h, w).unwrap();
        prop_assert!((all.complement().count() as f64 - (h * w) as f64 / 2.0).abs() <= w as f64);
    }

    #[test]
    fn grayscale_is_idempotent(seed in any::<u64>()) {
        let g = to_grayscale(&image(seed, Shape4::new(1, 3, 5, 7))).unwrap();
        prop_assert!(to_grayscale(&g).unwrap().max_abs_diff(&g).unwrap() < 1e-12);
    }

    #[test]
    fn inpainting_input_keeps_pixels_outside_the_mask(seed in any::<u64>()) {
        let y0 = image(seed, Shape4::new(1, 3, 16, 16));
        let s = make_inpainting_sample(&y0, &BrushParams::default(), &mut RandomSource::seed_from_u64(seed ^ 2)).unwrap();
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    if s.mask.at(0, 0, y, x) == 0.0 {
                        prop_assert_eq!(s.x.at(0, c, y, x), y0.at(0, c, y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), c in 1usize..5, local in any::<bool>()) {
        let (h, w) = (4, 6);
        let mut rng = RandomSource::seed_from_u64(seed);
        let q: Vec<f64> = (0..c * h * w).map(|_| 3.0 * rng.normal()).collect();
        let k: Vec<f64> = (0..c * h * w).map(|_| 3.0 * rng.normal()).collect();
        for group in attention_probs(&q, &k, c, h, w, local) {
            let m = (group.len() as f64).sqrt() as usize;
            prop_assert_eq!(m * m, group.len());
            for row in group.chunks(m) {
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn frechet_distance_is_symmetric_and_nonnegative(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = RandomSource::seed_from_u64(seed);
        let a: Vec<f64> = (0..40 * d).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..40 * d).map(|_| 1.5 * rng.normal() + 0.3).collect();
        let (sa, sb) = (FeatureStats::from_rows(&a, d).unwrap(), FeatureStats::from_rows(&b, d).unwrap());
        let (ab, ba) = (frechet_distance(&sa, &sb).unwrap(), frechet_distance(&sb, &sa).unwrap());
        prop_assert!((ab - ba).abs() < 1e-8 * ab.max(1.0));
        prop_assert!(ab > 0.0);
        prop_assert!(frechet_distance(&sa, &sa).unwrap().abs() < 1e-9);
    }

    #[test]
    fn inception_score_is_bounded(seed in any::<u64>(), k in 1usize..8, n in 1usize..30) {
        let mut rng = RandomSource::seed_from_u64(seed);
        let mut p = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> = (0..k).map(|_| rng.uniform().powi(4) + 1e-12).collect();
            let z: f64 = row.iter().sum();
            p.extend(row.into_iter().map(|v| v / z));
        }
        let is = inception_score(&p, k).unwrap();
        prop_assert!((1.0..=k as f64).contains(&is));
    }

    #[test]
    fn ms_ssim_is_bounded_and_one_on_identical(seed in any::<u64>()) {
        let shape = Shape4::new(1, 3, 24, 24);
        let (a, b) = (image(seed, shape), image(seed ^ 3, shape));
        let cfg = SsimConfig::default();
        let v = ms_ssim(&a, &b, &cfg).unwrap();
        prop_assert!((-1.0..=1.0).contains(&v));
        prop_assert_eq!(ms_ssim(&a, &a, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn panorama_width_formula(w in 1usize..40, n in 0usize..12) {
        let cfg = PanoramaConfig { direction: Direction::Both, n_steps: n, step_fraction: 0.5, ..PanoramaConfig::default() };
        prop_assert_eq!(panorama_width(2 * w, &cfg).unwrap(), 2 * w + 2 * n * w);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn consecutive_pair_diversity_ignores_reversal(seed in any::<u64>(), k in 2usize..6) {
        let clf = SmallClassifier::<f64>::new(ClassifierConfig::default(), &mut RandomSource::seed_from_u64(seed)).unwrap();
        let set = image(seed ^ 4, Shape4::new(k, 3, 8, 8));
        let rev = ImageTensor::stack(&(0..k).rev().map(|i| set.item(i)).collect::<Vec<_>>()).unwrap();
        let a = per_input_feature_diversity(&clf, &[set]).unwrap()[0];
        let b = per_input_feature_diversity(&clf, &[rev]).unwrap()[0];
        prop_assert!((a - b).abs() < 1e-12 * a.max(1.0));
    }
}
