use mdcn::cli::Config;
use mdcn::kernels::softmax;
use mdcn::kitti::{
    average_precision, format_detections, nms_indices, parse_detections, DetectionRecord, Difficulty, EvalClass,
    GroundTruth, PixelBox,
};
use mdcn::multibox::{
    decode, encode, generate_anchors, iou, match_anchors, mine_negatives, AnchorConfig, AnchorMatch, AnchorSet, BBox,
    Variances,
};
use mdcn::Tensor;
use proptest::prelude::*;

fn unit_box() -> impl Strategy<Value = BBox> {
    (0.02..0.98f64, 0.02..0.98f64, 0.01..0.6f64, 0.01..0.6f64)
        .prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h).unwrap())
}

fn corner_box() -> impl Strategy<Value = [f64; 4]> {
    (0.0..0.8f64, 0.0..0.8f64, 0.02..0.3f64, 0.02..0.3f64).prop_map(|(x, y, w, h)| [x, y, x + w, y + h])
}

fn pixel_box() -> impl Strategy<Value = PixelBox> {
    (0.0..200.0f64, 0.0..200.0f64, 10.0..80.0f64, 26.0..80.0f64)
        .prop_map(|(x, y, w, h)| PixelBox::new(x, y, x + w, y + h).unwrap())
}

fn class() -> impl Strategy<Value = EvalClass> {
    prop::sample::select(EvalClass::ALL.to_vec())
}

fn small_anchor_set() -> impl Strategy<Value = AnchorSet> {
    (1usize..5, 1usize..7).prop_map(|(m, k)| {
        let taps = AnchorConfig::default().tap_specs(&[m, 1], &[k, 4]).unwrap();
        generate_anchors(&taps).unwrap()
    })
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in unit_box(), b in unit_box()) {
        let (x, y) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(x, y);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encode_decode_round_trip(gt in unit_box(), anchor in unit_box()) {
        let v = Variances::default();
        let back = decode(&encode(&gt, &anchor, v).unwrap(), &anchor, v).unwrap();
        for (p, q) in [(back.cx, gt.cx), (back.cy, gt.cy), (back.w, gt.w), (back.h, gt.h)] {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn nms_keeps_a_spread_subset(
        boxes in prop::collection::vec(corner_box(), 0..30),
        seed in any::<u64>(),
        thr in 0.1..0.9f64,
    ) {
        let scores: Vec<f64> = (0..boxes.len()).map(|i| ((seed >> (i % 60)) & 7) as f64).collect();
        let kept = nms_indices(&boxes, &scores, thr);
        let mut seen = kept.clone();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), kept.len());
        prop_assert!(kept.iter().all(|&i| i < boxes.len()));
        prop_assert!(kept.windows(2).all(|w| scores[w[0]] >= scores[w[1]]));
        for (a, &i) in kept.iter().enumerate() {
            for &j in &kept[a + 1..] {
                prop_assert!(mdcn::multibox::iou_corners(&boxes[i], &boxes[j]) <= thr);
            }
        }
        // every dropped box is suppressed by a kept one
        for i in (0..boxes.len()).filter(|i| !kept.contains(i)) {
            prop_assert!(kept.iter().any(|&k| mdcn::multibox::iou_corners(&boxes[k], &boxes[i]) > thr));
        }
    }

    #[test]
    fn every_ground_truth_gets_an_anchor(
        anchors in small_anchor_set(),
        gts in prop::collection::vec(unit_box(), 0..4),
        thr in 0.1..0.9f64,
    ) {
        let m = match_anchors(&gts, &anchors.boxes, thr).unwrap();
        prop_assert_eq!(m.states.len(), anchors.len());
        prop_assert_eq!(m.num_positive, m.positives().count());
        let covered: Vec<usize> = m.positives().map(|(_, g)| g).collect();
        for g in 0..gts.len().min(anchors.len()) {
            prop_assert!(covered.contains(&g));
        }
        for (a, s) in m.states.iter().enumerate() {
            let best = gts.iter().map(|g| iou(g, &anchors.boxes[a])).fold(0.0, f64::max);
            if best > thr {
                prop_assert!(matches!(s, AnchorMatch::Positive(_)));
            }
        }
    }

    #[test]
    fn mined_negatives_are_the_hardest(
        losses in prop::collection::vec(0.0..5.0f64, 1..40),
        positive_mask in prop::collection::vec(any::<bool>(), 40),
        ratio in 0.5..4.0f64,
    ) {
        let states: Vec<AnchorMatch> = (0..losses.len())
            .map(|i| if positive_mask[i] { AnchorMatch::Positive(0) } else { AnchorMatch::Negative })
            .collect();
        let num_positive = states.iter().filter(|s| matches!(s, AnchorMatch::Positive(_))).count();
        let m = mdcn::multibox::MatchAssignment { states, num_positive };
        let mined = mine_negatives(&losses, &m, ratio);
        let negatives: Vec<usize> = (0..losses.len()).filter(|&i| !positive_mask[i]).collect();
        let want = ((ratio * num_positive as f64).floor() as usize).min(negatives.len());
        prop_assert_eq!(mined.len(), want);
        prop_assert!(mined.windows(2).all(|w| w[0] < w[1]));
        let floor = mined.iter().map(|&i| losses[i]).fold(f64::INFINITY, f64::min);
        for i in negatives.iter().filter(|i| !mined.contains(i)) {
            prop_assert!(losses[*i] <= floor);
        }
    }

    #[test]
    fn ap_is_a_fraction(
        gts in prop::collection::vec(prop::collection::vec((class(), pixel_box()), 0..4), 1..5),
        dets in prop::collection::vec(prop::collection::vec((class(), pixel_box(), 0.0..1.0f64), 0..5), 5),
        c in class(),
    ) {
        let gts: Vec<Vec<GroundTruth>> = gts
            .into_iter()
            .map(|v| v.into_iter().map(|(c, b)| GroundTruth::new(c, b, 0.0, 0)).collect())
            .collect();
        let dets: Vec<Vec<DetectionRecord>> = dets
            .into_iter()
            .take(gts.len())
            .map(|v| v.into_iter().map(|(c, b, s)| DetectionRecord::new(c, b, s).unwrap()).collect())
            .collect();
        for d in Difficulty::LEVELS {
            let r = average_precision(&dets, &gts, c, d, 0.5).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.ap));
        }
    }

    #[test]
    fn detection_lines_round_trip(
        dets in prop::collection::vec((class(), pixel_box(), 0.0..1.0f64), 0..8),
    ) {
        let dets: Vec<DetectionRecord> =
            dets.into_iter().map(|(c, b, s)| DetectionRecord::new(c, b, s).unwrap()).collect();
        let back = parse_detections(&format_detections(&dets)).unwrap();
        prop_assert_eq!(back.len(), dets.len());
        for (a, b) in back.iter().zip(&dets) {
            prop_assert_eq!(a.class, b.class);
            prop_assert!((a.confidence - b.confidence).abs() < 1e-6);
            for (p, q) in a.bbox.corners().iter().zip(b.bbox.corners()) {
                prop_assert!((p - q).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-30.0..30.0f64, 2..8)) {
        let n = v.len();
        let p = softmax(&Tensor::new(vec![1, n, 1, 1], v).unwrap(), 1).unwrap();
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
        prop_assert!(p.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn anchor_count_matches_layout(sizes in prop::collection::vec(1usize..8, 2..5), k in 1usize..7) {
        let ks = vec![k; sizes.len()];
        let taps = AnchorConfig::default().tap_specs(&sizes, &ks).unwrap();
        let set = generate_anchors(&taps).unwrap();
        prop_assert_eq!(set.len(), sizes.iter().map(|m| m * m * k).sum::<usize>());
        prop_assert_eq!(set.len(), AnchorSet::expected_len(&taps));
        prop_assert_eq!(set.dump().lines().count(), set.len());
        for b in &set.boxes {
            let c = b.corners();
            prop_assert!(c[0] >= 0.0 && c[1] >= 0.0 && c[2] <= 1.0 + 1e-12 && c[3] <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn config_dump_is_a_fixed_point(seed in any::<u64>(), lr in 1e-5..1e-2f64, iters in 1usize..5000) {
        let cfg = Config {
            seed,
            base_lr: lr,
            iterations: iters,
            ..Config::default()
        };
        let text = cfg.dump();
        let back = Config::parse(&text).unwrap();
        prop_assert_eq!(back.dump(), text);
    }
}
