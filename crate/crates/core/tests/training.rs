use partdisc_core::part_layer::{forward, init_from_clusters, spherical_kmeans, AdagradState, PartLayer};
use partdisc_core::FeatureMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_backbone(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureMap<f64> {
    FeatureMap::new(h, w, c, (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_layer(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> PartLayer {
    let w = (0..c_in * c_out).map(|_| rng.random_range(-1.0..1.0)).collect();
    PartLayer::new(c_in, c_out, w, rng.random_range(0.5..3.0)).unwrap()
}

#[test]
fn adagrad_first_step_is_signed_learning_rate() {
    let mut layer = PartLayer::new(2, 2, vec![0.5, -0.5, 1.0, 0.0], 1.0).unwrap();
    let mut opt = AdagradState::for_layer(&layer, 5e-3, 0.1, vec![1]);
    opt.step(&mut layer, &[0.3, -2.0, 1e-3, 0.0]).unwrap();
    let expected = [0.5 - 5e-3, -0.5 + 5e-3, 1.0 - 5e-3, 0.0];
    for (w, e) in layer.weights().iter().zip(expected) {
        assert!((w - e).abs() < 1e-9);
    }
    opt.set_epoch(1);
    assert!((opt.effective_lr() - 5e-4).abs() < 1e-15);
}

#[test]
fn cluster_init_rows_are_unit_with_zero_background() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 6;
    let sample: Vec<f64> = (0..200 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let layer = init_from_clusters(&sample, dim, 5, 7, 20, 1.0).unwrap();
    assert_eq!(layer.c_out(), 6);
    for j in 0..5 {
        let n: f64 = layer.row(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
    assert!(layer.row(5).iter().all(|v| *v == 0.0));
    let again = spherical_kmeans(&sample, dim, 5, 7, 20).unwrap();
    assert_eq!(&layer.weights()[..5 * dim], again.as_slice());
}

proptest! {
    #[test]
    fn probabilities_are_distributions(seed in 0u64..1000, h in 1usize..5, w in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = random_layer(&mut rng, 3, 5);
        let probs = forward(&random_backbone(&mut rng, h, w, 3), &layer).unwrap();
        for cell in 0..h * w {
            let v = probs.cell_at(cell);
            prop_assert!(v.iter().all(|p| *p > 0.0 && *p <= 1.0));
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    /// Only the direction of a backbone vector matters.
    #[test]
    fn forward_ignores_vector_scale(seed in 0u64..1000, scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = random_layer(&mut rng, 3, 4);
        let bb = random_backbone(&mut rng, 3, 3, 3);
        let scaled = FeatureMap::new(3, 3, 3, bb.data().iter().map(|v| v * scale).collect()).unwrap();
        let (a, b) = (forward(&bb, &layer).unwrap(), forward(&scaled, &layer).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn adagrad_accumulator_never_decreases(grads in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..10)) {
        let mut layer = PartLayer::new(2, 2, vec![0.0; 4], 1.0).unwrap();
        let mut opt = AdagradState::for_layer(&layer, 5e-3, 0.1, vec![]);
        let mut prev = opt.accumulator().to_vec();
        for g in &grads {
            let before = layer.weights().to_vec();
            opt.step(&mut layer, g).unwrap();
            for (k, (a, p)) in opt.accumulator().iter().zip(&prev).enumerate() {
                prop_assert!(a >= p);
                // each step moves a weight by at most the learning rate
                prop_assert!((layer.weights()[k] - before[k]).abs() <= 5e-3 + 1e-12);
            }
            prev = opt.accumulator().to_vec();
        }
    }
}
