use partdisc_core::detect::{extract_peaks, iou, nms, BBox, Detection};
use partdisc_core::eval::{average_precision, EvalImage, GroundTruth, MatchRule};
use partdisc_core::FeatureMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_box(rng: &mut ChaCha8Rng, extent: f64) -> BBox {
    let x = rng.random_range(0.0..extent);
    let y = rng.random_range(0.0..extent);
    let w = rng.random_range(5.0..40.0);
    let h = rng.random_range(5.0..40.0);
    BBox::new(x, y, x + w, y + h).unwrap()
}

fn random_detection(rng: &mut ChaCha8Rng, channels: usize) -> Detection {
    let bbox = random_box(rng, 100.0);
    let (x, y) = bbox.center();
    Detection {
        channel: rng.random_range(0..channels),
        x,
        y,
        // coarse scores so ties occur
        score: rng.random_range(0..20) as f64 / 20.0,
        bbox,
    }
}

#[test]
fn perfect_and_empty_detectors() {
    let b = BBox::new(10.0, 10.0, 30.0, 30.0).unwrap();
    let truth = [GroundTruth { x: 20.0, y: 20.0, bbox: Some(b) }];
    let hit = Detection { channel: 0, x: 20.0, y: 20.0, score: 0.9, bbox: b };
    // 4 px off on a 50 px image is within a tenth of the longer side
    let near = Detection { x: 24.0, ..hit };
    let ap = |d: &[Detection], rule| {
        let image = EvalImage { detections: d, truths: &truth, image_h: 50.0, image_w: 50.0 };
        average_precision(&[image], rule).unwrap()
    };
    assert_eq!(ap(&[hit], MatchRule::Iou(0.5)), 1.0);
    assert_eq!(ap(&[], MatchRule::Iou(0.5)), 0.0);
    assert_eq!(ap(&[near], MatchRule::L2(0.1)), 1.0);
}

fn is_strict_peak(m: &FeatureMap<f64>, r: usize, c: usize, ch: usize) -> bool {
    let (h, w, _) = m.shape();
    let v = m.get(r, c, ch);
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            let (rr, cc) = (r as i64 + dr, c as i64 + dc);
            if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                continue;
            }
            if m.get(rr as usize, cc as usize, ch) >= v {
                return false;
            }
        }
    }
    true
}

proptest! {
    #[test]
    fn peaks_match_exhaustive_scan(seed in 0u64..1000, h in 1usize..7, w in 1usize..7, thr in 0.0f64..0.8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 3;
        let m = FeatureMap::new(h, w, c, (0..h * w * c).map(|_| rng.random::<f64>()).collect()).unwrap();
        let peaks = extract_peaks(&m, h as f64 * 16.0, w as f64 * 16.0, thr, 32.0).unwrap();
        let mut expected = 0;
        for r in 0..h {
            for q in 0..w {
                // last channel is background and never detected
                for ch in 0..c - 1 {
                    if m.get(r, q, ch) >= thr && is_strict_peak(&m, r, q, ch) {
                        expected += 1;
                        let (x, y) = ((q as f64 + 0.5) * 16.0, (r as f64 + 0.5) * 16.0);
                        prop_assert!(peaks.iter().any(|d| d.channel == ch && d.x == x && d.y == y));
                    }
                }
            }
        }
        prop_assert_eq!(peaks.len(), expected);
        prop_assert!(peaks.windows(2).all(|p| p[0].score >= p[1].score));
    }

    #[test]
    fn kept_boxes_do_not_overlap(seed in 0u64..1000, t in 0.1f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dets: Vec<Detection> = (0..30).map(|_| random_detection(&mut rng, 2)).collect();
        let kept = nms(&dets, t);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                if a.channel == b.channel {
                    prop_assert!(iou(&a.bbox, &b.bbox).unwrap() < t);
                }
            }
        }
    }
}
