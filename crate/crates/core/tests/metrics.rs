use std::collections::BTreeSet;

use proptest::prelude::*;
use scanlab::metrics::ConfusionMatrix;

/// IoU from pixel sets: |P ∩ G| / |P ∪ G| over pixels whose ground truth is not excluded.
fn set_iou(pred: &[usize], gt: &[usize], k: usize, excluded: &BTreeSet<usize>) -> Vec<Option<f64>> {
    let scored: Vec<usize> = (0..gt.len()).filter(|&i| !excluded.contains(&gt[i])).collect();
    (0..k)
        .map(|c| {
            if excluded.contains(&c) {
                return None;
            }
            let p: BTreeSet<usize> = scored.iter().copied().filter(|&i| pred[i] == c).collect();
            let g: BTreeSet<usize> = scored.iter().copied().filter(|&i| gt[i] == c).collect();
            let union = p.union(&g).count();
            (union > 0).then(|| p.intersection(&g).count() as f64 / union as f64)
        })
        .collect()
}

fn maps(k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (prop::collection::vec(0..k, 64), prop::collection::vec(0..k, 64))
}

fn case() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>, Option<usize>)> {
    (1usize..=4).prop_flat_map(|k| (Just(k), maps(k), prop::option::of(0..k)).prop_map(|(k, (p, g), e)| (k, p, g, e)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_set_oracle((k, pred, gt, excl) in case()) {
        let mut cm = ConfusionMatrix::new(k, excl);
        cm.update(&pred, &gt).unwrap();
        let excluded: BTreeSet<usize> = excl.into_iter().collect();
        let oracle = set_iou(&pred, &gt, k, &excluded);
        prop_assert_eq!(cm.iou_per_class(), oracle.clone());
        let defined: Vec<f64> = oracle.into_iter().flatten().collect();
        let expected = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        prop_assert_eq!(cm.miou(), expected);
        prop_assert_eq!(cm.total() as usize, gt.iter().filter(|g| !excluded.contains(g)).count());
    }

    #[test]
    fn relabelling_permutes_iou((k, pred, gt, _) in case(), rot in 0usize..4) {
        let perm: Vec<usize> = (0..k).map(|c| (c + rot) % k).collect();
        let mut a = ConfusionMatrix::new(k, []);
        a.update(&pred, &gt).unwrap();
        let mut b = ConfusionMatrix::new(k, []);
        let pp: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
        let gg: Vec<usize> = gt.iter().map(|&c| perm[c]).collect();
        b.update(&pp, &gg).unwrap();
        let (ia, ib) = (a.iou_per_class(), b.iou_per_class());
        for c in 0..k {
            prop_assert_eq!(ia[c], ib[perm[c]]);
        }
        let (ma, mb) = (a.miou().unwrap(), b.miou().unwrap());
        prop_assert!((ma - mb).abs() < 1e-12);
    }

    #[test]
    fn fixing_a_pixel_never_lowers_miou((k, pred, gt, _) in case(), at in 0usize..64) {
        let mut before = ConfusionMatrix::new(k, []);
        before.update(&pred, &gt).unwrap();
        let mut fixed = pred.clone();
        fixed[at] = gt[at];
        let mut after = ConfusionMatrix::new(k, []);
        after.update(&fixed, &gt).unwrap();
        prop_assert!(after.miou().unwrap() >= before.miou().unwrap() - 1e-12);
    }

    #[test]
    fn merging_shards_equals_one_pass((k, pred, gt, excl) in case(), cut in 0usize..=64) {
        let mut whole = ConfusionMatrix::new(k, excl);
        whole.update(&pred, &gt).unwrap();
        let mut a = ConfusionMatrix::new(k, excl);
        let mut b = ConfusionMatrix::new(k, excl);
        a.update(&pred[..cut], &gt[..cut]).unwrap();
        b.update(&pred[cut..], &gt[cut..]).unwrap();
        a += &b;
        prop_assert_eq!(a, whole);
    }
}
