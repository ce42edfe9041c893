use proptest::prelude::*;
use roadhazard::cstix::CStix;
use roadhazard::eval::{hull_value, instance_hull, instance_stats, pixel_counts, roc_hull, PixelCounts};
use roadhazard::imaging::{LabelMap, LABEL_FREE_SPACE};

fn stix(u: usize, width: usize, v_top: usize, v_bottom: usize) -> CStix {
    CStix { cluster: 0, u, width, v_top, v_bottom, disparity: 10.0, z: 10.0 }
}

#[test]
fn tpr_hand_tally() {
    let c = PixelCounts { tp: 250, fp: 0, sub: 2, dwn: 1, gt_obstacles: 4000, gt_freespace: 1 };
    assert_eq!(c.tpr().unwrap(), 0.25);
    let c = PixelCounts { tp: 10, fp: 30, sub: 2, dwn: 2, gt_obstacles: 640, gt_freespace: 9600 };
    assert_eq!(c.rates().unwrap(), (0.25, 0.05));
}

#[test]
fn counts_from_label_map() {
    // 8x4 full-res map: left half free space, columns 4..8 obstacle 2
    let mut labels = LabelMap::unlabeled(8, 4);
    for y in 0..4 {
        for x in 0..8 {
            labels.set(x, y, if x < 4 { LABEL_FREE_SPACE } else { 2 });
        }
    }
    // detector resolution 4x2, centers mapped by x2
    let c = pixel_counts([(0, 0), (1, 1), (2, 0), (3, 1)], &labels, 1, 2).unwrap();
    assert_eq!((c.tp, c.fp, c.gt_obstacles, c.gt_freespace), (2, 2, 16, 16));
    assert_eq!(c.rates().unwrap(), (0.5, 0.5));
    assert!(pixel_counts([(4, 0)], &labels, 1, 2).is_err());
}

#[test]
fn empty_ground_truth_is_an_error() {
    let c = PixelCounts { tp: 1, fp: 1, sub: 1, dwn: 1, gt_obstacles: 0, gt_freespace: 0 };
    assert!(c.tpr().is_err() && c.fpr().is_err());
}

#[test]
fn fp_stixel_rule_fires_strictly_above_half() {
    // a 10x1 box over a row with k free-space pixels
    let labels = LabelMap::unlabeled(10, 1);
    for k in 0..=10 {
        let free: Vec<bool> = (0..10).map(|x| x < k).collect();
        let stats = instance_stats(&[stix(0, 10, 0, 0)], &labels, &free, 0.5).unwrap();
        assert_eq!(stats.fp_stixels, usize::from(k > 5), "k = {k}");
    }
    // the rule uses the box clipped to the image
    let free = vec![true; 10];
    let stats = instance_stats(&[stix(8, 20, 0, 0)], &labels, &free, 0.5).unwrap();
    assert_eq!(stats.fp_stixels, 1);
}

#[test]
fn instance_coverage_hand_tally() {
    // instance 2 fills rows 0..2 of a 4x4 map, instance 3 the bottom-right pixel
    let mut labels = LabelMap::unlabeled(4, 4);
    for x in 0..4 {
        labels.set(x, 0, 2);
        labels.set(x, 1, 2);
    }
    labels.set(3, 3, 3);
    let free = vec![false; 16];
    // covers the left half of instance 2 and none of instance 3
    let stats = instance_stats(&[stix(0, 2, 0, 1)], &labels, &free, 0.5).unwrap();
    assert_eq!(stats.instances.len(), 2);
    assert_eq!((stats.instances[0].itp, stats.instances[0].ifn), (4, 4));
    assert_eq!((stats.instances[1].itp, stats.instances[1].ifn), (0, 1));
    assert_eq!(stats.mean_iint(), 0.25);
    assert_eq!(stats.fp_per_frame(), 0.0);
}

fn below_or_on(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    hull_value(hull, p.0).is_some_and(|y| p.1 <= y + 1e-12)
}

proptest! {
    #[test]
    fn roc_hull_dominates_and_is_idempotent(pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..60)) {
        let hull = roc_hull(&pts);
        prop_assert_eq!(hull.first().copied(), Some((0.0, 0.0)));
        prop_assert_eq!(hull.last().copied(), Some((1.0, 1.0)));
        for &p in &pts {
            prop_assert!(below_or_on(&hull, p), "{:?} above hull", p);
        }
        for w in hull.windows(2) {
            prop_assert!(w[1].0 > w[0].0 && w[1].1 >= w[0].1);
        }
        prop_assert_eq!(roc_hull(&hull), hull.clone());
        // input order does not matter
        let mut rev = pts.clone();
        rev.reverse();
        prop_assert_eq!(roc_hull(&rev), hull);
    }

    #[test]
    fn instance_hull_dominates_up_to_best(pts in prop::collection::vec((0.0f64..20.0, 0.0f64..1.0), 1..40)) {
        let hull = instance_hull(&pts);
        let best = pts.iter().map(|p| p.1).fold(0.0, f64::max);
        prop_assert_eq!(hull.last().map(|p| p.1), Some(best));
        for &p in &pts {
            if p.0 <= hull.last().unwrap().0 {
                prop_assert!(below_or_on(&hull, p));
            }
        }
        prop_assert_eq!(instance_hull(&hull), hull);
    }

    #[test]
    fn rates_are_homogeneous(tp in 0u64..10_000, fp in 0u64..10_000, gt in 1u64..100_000, k in 1u64..50) {
        let a = PixelCounts { tp, fp, sub: 2, dwn: 2, gt_obstacles: gt, gt_freespace: gt };
        let b = PixelCounts { tp: k * tp, fp: k * fp, gt_obstacles: k * gt, gt_freespace: k * gt, ..a };
        let (ra, rb) = (a.rates().unwrap(), b.rates().unwrap());
        prop_assert!((ra.0 - rb.0).abs() <= 1e-12 * ra.0.max(1.0));
        prop_assert!((ra.1 - rb.1).abs() <= 1e-12 * ra.1.max(1.0));
    }

    #[test]
    fn instance_stats_ignore_stixel_order(
        boxes in prop::collection::vec((0usize..30, 1usize..10, 0usize..20, 0usize..10), 0..12),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (32, 24);
        let data: Vec<u16> = (0..w * h).map(|_| rng.random_range(0..5)).collect();
        let labels = LabelMap::new(w, h, data).unwrap();
        let free: Vec<bool> = labels.data.iter().map(|&l| l == LABEL_FREE_SPACE).collect();
        let stixels: Vec<CStix> = boxes.iter().map(|&(u, bw, v, bh)| stix(u, bw, v, v + bh)).collect();
        let mut reversed = stixels.clone();
        reversed.reverse();
        prop_assert_eq!(
            instance_stats(&stixels, &labels, &free, 0.5).unwrap(),
            instance_stats(&reversed, &labels, &free, 0.5).unwrap()
        );
    }
}
