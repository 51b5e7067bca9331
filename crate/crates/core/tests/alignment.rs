use partdisc_core::alignment::{
    align_pair, match_features, ransac, warp_to_canvas, AffineTransform, AlignParams, Match, SpatialTransform,
};
use partdisc_core::synth::{generate_dataset, oracle_affine_fit, SynthConfig};
use partdisc_core::{FeatureMap, TransformFamily};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_affine(rng: &mut ChaCha8Rng) -> AffineTransform {
    let row = |rng: &mut ChaCha8Rng, diag: usize| {
        let mut r = [0.0; 3];
        for (k, v) in r.iter_mut().enumerate() {
            *v = if k == diag {
                rng.random_range(0.8..1.2)
            } else if k == 2 {
                rng.random_range(-3.0..3.0)
            } else {
                rng.random_range(-0.2..0.2)
            };
        }
        r
    };
    AffineTransform::from_rows([row(rng, 0), row(rng, 1)]).unwrap()
}

fn planted(rng: &mut ChaCha8Rng, t: &AffineTransform, inliers: usize, outliers: usize) -> Vec<Match> {
    let mut out = Vec::new();
    for _ in 0..inliers {
        let src = (rng.random_range(0.0..14.0), rng.random_range(0.0..14.0));
        out.push(Match { dst: t.apply(src), src, score: 1.0 });
    }
    for _ in 0..outliers {
        let src = (rng.random_range(0.0..14.0), rng.random_range(0.0..14.0));
        let p = t.apply(src);
        // far enough that no outlier can pass the tolerance
        let dst = (p.0 + rng.random_range(3.0..6.0), p.1 - rng.random_range(3.0..6.0));
        out.push(Match { dst, src, score: 1.0 });
    }
    out
}

#[test]
fn least_squares_refit_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let t = random_affine(&mut rng);
        let m: Vec<Match> = planted(&mut rng, &t, 15, 0)
            .into_iter()
            .map(|mut x| {
                x.dst.0 += rng.random_range(-0.05..0.05);
                x.dst.1 += rng.random_range(-0.05..0.05);
                x
            })
            .collect();
        let fit = ransac(&m, TransformFamily::Affine, 50, 0.5, 1).unwrap();
        assert_eq!(fit.inliers.len(), m.len());
        let reference = oracle_affine_fit(&m).unwrap();
        assert!(fit.transform.as_affine().unwrap().max_abs_diff(&reference) < 1e-9);
    }
}

#[test]
fn exact_affine_fit_and_noise_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let t = random_affine(&mut rng);
    let exact = planted(&mut rng, &t, 12, 0);
    assert!(oracle_affine_fit(&exact).unwrap().max_abs_diff(&t) < 1e-9);

    let sigma = 0.01;
    let noisy: Vec<Match> = exact
        .iter()
        .map(|x| {
            let n: (f64, f64) = (rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal));
            Match { dst: (x.dst.0 + sigma * n.0, x.dst.1 + sigma * n.1), ..*x }
        })
        .collect();
    let fit = oracle_affine_fit(&noisy).unwrap();
    let rms = (noisy
        .iter()
        .map(|x| {
            let p = fit.apply(x.src);
            (p.0 - x.dst.0).powi(2) + (p.1 - x.dst.1).powi(2)
        })
        .sum::<f64>()
        / (2 * noisy.len()) as f64)
        .sqrt();
    assert!(rms <= 3.0 * sigma, "rms {rms}");
}

fn ramp(h: usize, w: usize) -> FeatureMap<f64> {
    FeatureMap::from_fn(h, w, 2, |r, c, ch| if ch == 0 { 2.0 * r as f64 - c as f64 + 1.0 } else { 0.5 * c as f64 }).unwrap()
}

proptest! {
    #[test]
    fn transform_inverse_round_trips(
        a in 0.7f64..1.3, b in -0.3f64..0.3, c in -0.3f64..0.3, d in 0.7f64..1.3,
        tr in -5.0f64..5.0, tc in -5.0f64..5.0, r in -10.0f64..10.0, s in -10.0f64..10.0,
    ) {
        let t = AffineTransform::from_rows([[a, b, tr], [c, d, tc]]).unwrap();
        let back = t.inverse().unwrap().apply(t.apply((r, s)));
        prop_assert!((back.0 - r).abs() < 1e-9 && (back.1 - s).abs() < 1e-9);
        let id = t.compose(&t.inverse().unwrap()).unwrap();
        prop_assert!(id.max_abs_diff(&AffineTransform::identity()) < 1e-9);
    }

    /// Bilinear sampling reproduces linear fields exactly, so two warps in
    /// sequence agree with the composed warp wherever both are defined.
    #[test]
    fn warps_compose_on_linear_fields(
        angle in -0.3f64..0.3, s1 in 0.9f64..1.1, tr in -1.5f64..1.5, tc in -1.5f64..1.5,
        dr in -1.0f64..1.0, dc in -1.0f64..1.0,
    ) {
        let (sn, cs) = angle.sin_cos();
        let a = AffineTransform::from_rows([[s1 * cs, -s1 * sn, tr], [s1 * sn, s1 * cs, tc]]).unwrap();
        let b = AffineTransform::translation(dr, dc);
        let m = ramp(9, 9);
        let (once, va) = warp_to_canvas(&m, a, 9, 9).unwrap();
        let (twice, vb) = warp_to_canvas(&once, b, 9, 9).unwrap();
        let (direct, vd) = warp_to_canvas(&m, SpatialTransform::Affine(b.compose(&a).unwrap()), 9, 9).unwrap();
        for cell in 0..81 {
            if !(vb[cell] && vd[cell]) {
                continue;
            }
            // the second warp only reads cells the first one filled
            let (r, c) = ((cell / 9) as f64 - dr, (cell % 9) as f64 - dc);
            let taps_valid = [r.floor(), r.ceil()].iter().all(|rr| {
                [c.floor(), c.ceil()].iter().all(|cc| {
                    let (rr, cc) = (rr.clamp(0.0, 8.0) as usize, cc.clamp(0.0, 8.0) as usize);
                    va[rr * 9 + cc]
                })
            });
            if !taps_valid {
                continue;
            }
            for ch in 0..2 {
                prop_assert!((twice.cell_at(cell)[ch] - direct.cell_at(cell)[ch]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_one_hot_maps_match_themselves(h in 2usize..6, w in 2usize..6) {
        let c = h * w;
        let m = FeatureMap::from_fn(h, w, c, |r, q, ch| if ch == r * w + q { 1.0 } else { 0.0 }).unwrap();
        let matches = match_features(&m, &m, 0.6).unwrap();
        prop_assert_eq!(matches.len(), h * w);
        for x in matches {
            prop_assert_eq!(x.src, x.dst);
            prop_assert_eq!(x.score, 1.0);
        }
    }
}

fn rectified(m: &FeatureMap<f32>) -> FeatureMap<f64> {
    let (h, w, c) = m.shape();
    FeatureMap::new(h, w, c, m.data().iter().map(|v| (*v as f64).max(0.0)).collect())
        .unwrap()
        .spatial_max_normalize()
        .unwrap()
}

/// Each synthetic image aligned onto the clean template should recover the
/// transform the generator applied. Matches are cell centers, so the fit
/// carries sub-cell quantization error; the bounds below reflect that.
#[test]
fn synthetic_images_align_back_to_template() {
    let mut errors = Vec::new();
    for seed in 0..3 {
        let cfg = SynthConfig { seed, noise: 0.05, ..SynthConfig::default() };
        let clean = SynthConfig {
            n_images: 1,
            noise: 0.0,
            decoys: 0,
            max_rotation_deg: 0.0,
            min_scale: 1.0,
            max_scale: 1.0,
            max_translation: 0.0,
            min_part_strength: 1.0,
            ..cfg.clone()
        };
        let template = rectified(&generate_dataset(&clean).unwrap().scenes[0].backbone);
        let params = AlignParams {
            family: TransformFamily::Affine,
            threshold: 0.6,
            iterations: 100,
            inlier_tol: 1.0,
            min_inliers: 6,
        };
        for (i, scene) in generate_dataset(&cfg).unwrap().scenes.iter().enumerate() {
            let p = align_pair(&rectified(&scene.backbone), &template, &params, i as u64).unwrap();
            assert!(!p.fallback);
            errors.push(p.transform.as_affine().unwrap().max_abs_diff(&scene.transform));
        }
    }
    errors.sort_by(f64::total_cmp);
    let n = errors.len();
    let within = errors.iter().filter(|e| **e < 0.5).count();
    assert!(within * 100 >= 95 * n, "{within}/{n} within 0.5");
    assert!(errors[n / 2] < 0.2, "median {}", errors[n / 2]);
}
