mod common;

use common::noise::{planted_noise, prob_from};
use polypseg::metrics::{dice, evaluate_paired, f1_score, match_detections, prf1, DetectionCounts, PairedReport};
use polypseg::postprocess::{canonical_order, BBox, BinaryMask, PostProcessConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mask_from(seed: u64, h: usize, w: usize, p: f64) -> BinaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BinaryMask::from_fn(h, w, |_, _| rng.random_bool(p))
}

/// Largest number of predictions that can be paired one-to-one with
/// ground-truth boxes containing their centres, by exhaustive search.
fn max_assignment(pred: &[BBox], gt: &[BBox], used: &mut Vec<bool>) -> usize {
    let Some((p, rest)) = pred.split_first() else { return 0 };
    let (cx, cy) = p.center();
    let mut best = max_assignment(rest, gt, used);
    for (j, g) in gt.iter().enumerate() {
        if !used[j] && g.contains_point(cx, cy) {
            used[j] = true;
            best = best.max(1 + max_assignment(rest, gt, used));
            used[j] = false;
        }
    }
    best
}

/// Pairwise-disjoint boxes on a coarse grid of cells.
fn disjoint_boxes(rng: &mut ChaCha8Rng, n: usize) -> Vec<BBox> {
    let mut cells: Vec<(usize, usize)> = (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).collect();
    let mut out = Vec::new();
    for _ in 0..n {
        let (r, c) = cells.remove(rng.random_range(0..cells.len()));
        let (x0, y0) = (c * 20 + rng.random_range(0..5), r * 20 + rng.random_range(0..5));
        out.push(BBox::new(x0, y0, x0 + rng.random_range(2..14), y0 + rng.random_range(2..14)));
    }
    out
}

fn any_boxes(rng: &mut ChaCha8Rng, n: usize) -> Vec<BBox> {
    (0..n)
        .map(|_| {
            let (x0, y0) = (rng.random_range(0..70), rng.random_range(0..70));
            BBox::new(x0, y0, x0 + rng.random_range(0..15), y0 + rng.random_range(0..15))
        })
        .collect()
}

proptest! {
    #[test]
    fn dice_symmetric_and_bounded(a in any::<u64>(), b in any::<u64>(), p in 0.0f64..1.0) {
        let x = mask_from(a, 12, 9, p);
        let y = mask_from(b, 12, 9, 1.0 - p);
        let d = dice(&x, &y).unwrap();
        prop_assert_eq!(d, dice(&y, &x).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(dice(&x, &x).unwrap(), 1.0);
        // |X∩Y| by direct count
        let inter = x.bits().iter().zip(y.bits()).filter(|(u, v)| **u && **v).count();
        if x.count() + y.count() > 0 {
            let want = 2.0 * inter as f64 / (x.count() + y.count()) as f64;
            prop_assert!((d - want).abs() < 1e-15);
        }
    }

    #[test]
    fn matching_counts_are_consistent(seed in any::<u64>(), np in 0usize..8, ng in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = any_boxes(&mut rng, np);
        let gt = any_boxes(&mut rng, ng);
        let c = match_detections(&pred, &gt);
        prop_assert_eq!(c.tp + c.fp, np);
        prop_assert_eq!(c.tp + c.fn_, ng);
        // translating everything leaves the counts unchanged
        let (dx, dy) = (rng.random_range(0..40), rng.random_range(0..40));
        let tp: Vec<BBox> = pred.iter().map(|b| b.translate(dx, dy)).collect();
        let tg: Vec<BBox> = gt.iter().map(|b| b.translate(dx, dy)).collect();
        prop_assert_eq!(match_detections(&tp, &tg), c);
        // so does permuting the predictions
        let mut shuffled = pred.clone();
        shuffled.reverse();
        prop_assert_eq!(match_detections(&shuffled, &gt), c);
    }

    #[test]
    fn matching_is_maximal_on_disjoint_ground_truth(seed in any::<u64>(), np in 0usize..7, ng in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = disjoint_boxes(&mut rng, ng);
        let mut pred = any_boxes(&mut rng, np);
        canonical_order(&mut pred);
        let c = match_detections(&pred, &gt);
        let best = max_assignment(&pred, &gt, &mut vec![false; gt.len()]);
        prop_assert_eq!(c.tp, best);
    }

    #[test]
    fn prf1_from_counts(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
        let (p, r, f) = prf1(DetectionCounts { tp, fp, fn_ });
        if tp + fp > 0 {
            prop_assert_eq!(p, tp as f64 / (tp + fp) as f64);
        }
        if tp + fn_ > 0 {
            prop_assert_eq!(r, tp as f64 / (tp + fn_) as f64);
        }
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!(f <= p.max(r) + 1e-15 && f >= p.min(r) - 1e-15 || tp == 0);
        prop_assert_eq!(f, f1_score(p, r));
    }
}

#[test]
fn planted_noise_tally() {
    let (pairs, blobs, planted) = planted_noise();
    let cfg = PostProcessConfig::default();
    let r: PairedReport = evaluate_paired(&pairs, &cfg).unwrap();
    let raw = r.without_postprocess;
    assert_eq!((raw.tp, raw.fp, raw.fn_), (blobs, planted, 0));
    let post = r.with_postprocess;
    assert_eq!((post.tp, post.fp, post.fn_), (blobs, 0, 0));
    assert_eq!(post.f1, 1.0);
    assert!(post.f1 > raw.f1);
    assert_eq!(raw.dice, post.dice);
    let d: f64 = pairs
        .iter()
        .map(|(p, g)| dice(&polypseg::postprocess::threshold(p, 0.5).unwrap(), g).unwrap())
        .sum::<f64>()
        / pairs.len() as f64;
    assert_eq!(raw.dice, d);
}

#[test]
fn report_json_round_trip() {
    let gt = mask_from(1, 20, 20, 0.3);
    let r = evaluate_paired(&[(prob_from(&gt, 0.7), gt.clone())], &PostProcessConfig::default()).unwrap();
    let back = PairedReport::from_json(&r.to_json()).unwrap();
    assert_eq!(back, r);
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    for key in ["dice", "tp", "fp", "fn", "precision", "recall", "f1"] {
        assert!(v["with_postprocess"].get(key).is_some(), "{key}");
        assert!(v["without_postprocess"].get(key).is_some(), "{key}");
    }
}
