use std::collections::{BTreeMap, BTreeSet};

use ladderseg::dataset_io::{augment, format_manifest, parse_manifest, ManifestEntry};
use ladderseg::grid::{InstanceMap, LabelMap};
use ladderseg::labelspace::{build_default_space, Group, RemapStrategy};
use ladderseg::metrics::{category_iou, class_iou, credit_negative_predictions, ConfusionMatrix};
use ladderseg::sampler::{batches, build_schedule};
use ladderseg::{AugmentParams, Sample, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn label_map(h: usize, w: usize, values: Vec<u8>) -> LabelMap {
    LabelMap::new(h, w, values).unwrap()
}

fn arb_map(max_side: usize, classes: u8) -> impl Strategy<Value = LabelMap> {
    (1..=max_side, 1..=max_side).prop_flat_map(move |(h, w)| {
        proptest::collection::vec(prop_oneof![9 => 0..classes, 1 => Just(255u8)], h * w)
            .prop_map(move |v| label_map(h, w, v))
    })
}

fn arb_pair(max_side: usize, classes: u8) -> impl Strategy<Value = (LabelMap, LabelMap)> {
    (1..=max_side, 1..=max_side).prop_flat_map(move |(h, w)| {
        (
            proptest::collection::vec(0..classes, h * w),
            proptest::collection::vec(prop_oneof![9 => 0..classes, 1 => Just(255u8)], h * w),
        )
            .prop_map(move |(p, g)| (label_map(h, w, p), label_map(h, w, g)))
    })
}

fn sample_from(labels: LabelMap) -> Sample {
    let (h, w) = labels.dims();
    Sample {
        name: "s".into(),
        image: Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| (c + y * w + x) as f64 / (3 * h * w) as f64),
        instances: Some(labels.map(|v| u16::from(v != 255) * (u16::from(v) + 1))),
        labels,
        dataset_id: "cityscapes".into(),
        is_negative: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augment_keeps_crop_size_and_label_set(
        labels in arb_map(24, 6),
        crop in 4usize..20,
        scale in (0.5f64..1.0, 1.0f64..2.0),
        seed in any::<u64>(),
    ) {
        let sample = sample_from(labels);
        let params = AugmentParams { scale_min: scale.0, scale_max: scale.1, crop, flip_prob: 0.5 };
        let out = augment(&sample, &params, 255, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(out.labels.dims(), (crop, crop));
        prop_assert_eq!(out.image.shape(), [1, 3, crop, crop]);
        prop_assert_eq!(out.instances.as_ref().unwrap().dims(), (crop, crop));
        let before: BTreeSet<u8> = sample.labels.data().iter().copied().chain([255]).collect();
        prop_assert!(out.labels.data().iter().all(|v| before.contains(v)));
        // instances stay attached to the class they were drawn with
        for (l, i) in out.labels.data().iter().zip(out.instances.unwrap().data()) {
            prop_assert_eq!(*i, u16::from(*l != 255) * (u16::from(*l) + 1));
        }
    }

    #[test]
    fn flip_commutes_with_scale_and_crop(labels in arb_map(20, 5), crop in 4usize..16, seed in any::<u64>()) {
        let sample = sample_from(labels);
        let plain = AugmentParams { scale_min: 0.7, scale_max: 1.4, crop, flip_prob: 0.0 };
        let flipped = AugmentParams { flip_prob: 1.0, ..plain.clone() };
        let a = augment(&sample, &plain, 255, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = augment(&sample, &flipped, 255, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a.labels.flip_horizontal(), b.labels);
        prop_assert_eq!(a.instances.unwrap().flip_horizontal(), b.instances.unwrap());
        for c in 0..3 {
            for y in 0..crop {
                for x in 0..crop {
                    prop_assert_eq!(a.image.at([0, c, y, x]), b.image.at([0, c, y, crop - 1 - x]));
                }
            }
        }
    }

    #[test]
    fn schedules_are_mixed_and_meet_the_ratio(
        driving in proptest::collection::vec(1usize..30, 1..4),
        indoor in proptest::collection::vec(1usize..60, 1..3),
        ratio in 0.25f64..4.0,
        batch in 2usize..10,
        seed in any::<u64>(),
    ) {
        let mut sizes = BTreeMap::new();
        let mut groups = BTreeMap::new();
        for (i, n) in driving.iter().enumerate() {
            sizes.insert(format!("d{i}"), *n);
            groups.insert(format!("d{i}"), Group::Driving);
        }
        for (i, n) in indoor.iter().enumerate() {
            sizes.insert(format!("i{i}"), *n);
            groups.insert(format!("i{i}"), Group::Indoor);
        }
        let s = build_schedule(&sizes, &groups, ratio, batch, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let d: usize = driving.iter().sum();
        let n: usize = indoor.iter().sum();
        prop_assert!((s.replication * d) as f64 >= ratio * n as f64);
        prop_assert!(s.replication == 1 || (((s.replication - 1) * d) as f64) < ratio * n as f64);
        prop_assert!(s.entries.iter().all(|e| e.index < sizes[&e.dataset]));
        prop_assert_eq!(s.entries.len() % batch, 0);
        // every batch is mixed while both groups still have entries
        let bs = batches(&s);
        let mixed = bs
            .iter()
            .filter(|b| {
                b.iter().any(|e| groups[&e.dataset] == Group::Driving)
                    && b.iter().any(|e| groups[&e.dataset] == Group::Indoor)
            })
            .count();
        prop_assert!(mixed >= bs.len().min(s.driving_entries).min(s.indoor_entries));
    }

    #[test]
    fn confusion_merge_equals_joint_accumulation(
        (pred, gt) in arb_pair(12, 5),
        cut in 0usize..=12,
    ) {
        let cut = cut.min(pred.height());
        let rows = |m: &LabelMap, lo: usize, hi: usize| LabelMap::from_fn(hi - lo, m.width(), |y, x| m.get(lo + y, x));
        let mut whole = ConfusionMatrix::new(5);
        whole.accumulate(&pred, &gt, 255).unwrap();
        let mut top = ConfusionMatrix::new(5);
        top.accumulate(&rows(&pred, 0, cut), &rows(&gt, 0, cut), 255).unwrap();
        let mut bottom = ConfusionMatrix::new(5);
        bottom.accumulate(&rows(&pred, cut, pred.height()), &rows(&gt, cut, gt.height()), 255).unwrap();
        top.merge(&bottom).unwrap();
        prop_assert_eq!(&top, &whole);
        let report = class_iou(&whole, &[0, 1, 2, 3, 4]);
        prop_assert!(report.per_class.values().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn perfect_predictions_score_one(gt in arb_map(12, 19)) {
        let space = build_default_space();
        let pred = gt.map(|v| if v == 255 { 0 } else { v });
        let mut conf = ConfusionMatrix::for_space(&space);
        conf.accumulate(&pred, &gt, 255).unwrap();
        let classes: Vec<u8> = (0..19).collect();
        let r = class_iou(&conf, &classes);
        prop_assert!(r.per_class.values().flatten().all(|v| *v == 1.0));
        let c = category_iou(&conf, &space);
        prop_assert!(c.per_class.values().flatten().all(|v| *v == 1.0));
    }

    #[test]
    fn foreign_resolution_is_idempotent(values in proptest::collection::vec(0u8..41, 1..64)) {
        let space = build_default_space();
        let pred = label_map(1, values.len(), values);
        for strategy in [RemapStrategy::identity(), RemapStrategy::auto_void(), RemapStrategy::to_class(0)] {
            let once = space.resolve_foreign(&pred, "wilddash", &strategy).unwrap();
            let twice = space.resolve_foreign(&once, "wilddash", &strategy).unwrap();
            prop_assert_eq!(&once, &twice);
            if strategy != RemapStrategy::identity() {
                let dest = space.dataset("wilddash").unwrap();
                prop_assert!(once.data().iter().all(|v| dest.native(*v).is_some()));
            }
        }
    }

    #[test]
    fn negative_credit_never_adds_errors(values in proptest::collection::vec((0u8..41, prop_oneof![0u8..19, Just(39u8), Just(255u8)]), 1..64)) {
        let space = build_default_space();
        let (p, g): (Vec<u8>, Vec<u8>) = values.into_iter().unzip();
        let pred = label_map(1, p.len(), p);
        let gt = label_map(1, g.len(), g);
        let credited = credit_negative_predictions(&pred, &gt, &space).unwrap();
        let errors = |m: &LabelMap| m.data().iter().zip(gt.data()).filter(|(a, b)| **b != 255 && a != b).count();
        prop_assert!(errors(&credited) <= errors(&pred));
    }

    #[test]
    fn native_encoding_roundtrips(dataset in prop::sample::select(vec!["cityscapes", "kitti", "wilddash", "scannet"])) {
        let space = build_default_space();
        let map = space.dataset(dataset).unwrap();
        for c in map.classes() {
            prop_assert_eq!(map.unified(map.native(c).unwrap()), Some(c));
        }
    }

    #[test]
    fn manifest_roundtrips(entries in proptest::collection::vec(("[a-z][a-z0-9_]{0,12}", any::<bool>()), 0..10)) {
        let entries: Vec<ManifestEntry> = entries
            .into_iter()
            .map(|(name, is_negative)| ManifestEntry { name, is_negative })
            .collect();
        prop_assert_eq!(parse_manifest(&format_manifest(&entries)).unwrap(), entries);
    }
}

#[test]
fn instances_follow_labels_through_nearest_resize() {
    let labels = LabelMap::from_fn(6, 6, |y, _| (y / 2) as u8);
    let mut sample = sample_from(labels);
    sample.instances = Some(InstanceMap::from_fn(6, 6, |y, _| (y / 2) as u16 + 1));
    let params = AugmentParams { scale_min: 2.0, scale_max: 2.0, crop: 12, flip_prob: 0.0 };
    let out = augment(&sample, &params, 255, &mut ChaCha8Rng::seed_from_u64(0));
    for (l, i) in out.labels.data().iter().zip(out.instances.unwrap().data()) {
        assert_eq!(u16::from(*l) + 1, *i);
    }
}
