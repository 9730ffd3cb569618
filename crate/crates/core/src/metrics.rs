//! Evaluation: confusion matrices, class/category IoU, instance-weighted
//! iIoU, the negative-image scoring rule and foreign-class incidence.
//!
//! iIoU follows the Cityscapes benchmark definition. For a class `c` with
//! instances, every ground-truth instance `i` of size `s_i` gets the weight
//! `w_i = s_avg(c) / s_i`, where `s_avg(c)` is the mean size of all evaluated
//! instances of `c`. Then
//!
//! ```text
//! iTP = sum_i w_i * tp_i      iFN = sum_i w_i * (s_i - tp_i)
//! iIoU = iTP / (iTP + FP + iFN)
//! ```
//!
//! with `FP` the unweighted false-positive pixel count of `c`. For classes
//! without instances all weights are 1 and iIoU equals IoU.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_same_dims, InstanceMap, LabelMap};
use crate::labelspace::{Category, Group, LabelSpace};

/// Square matrix of pixel counts indexed `[ground truth][prediction]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    size: usize,
    counts: Vec<u64>,
    total: u64,
}

impl ConfusionMatrix {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            counts: vec![0; size * size],
            total: 0,
        }
    }

    /// Sized for every object and negative class of `space`.
    pub fn for_space(space: &LabelSpace) -> Self {
        Self::new(space.num_labels())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn total_pixels(&self) -> u64 {
        self.total
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.size + pred]
    }

    fn bump(&mut self, gt: u8, pred: u8, by: u64) -> Result<()> {
        for v in [gt, pred] {
            if v as usize >= self.size {
                return Err(Error::LabelOutOfRange {
                    label: v,
                    num_classes: self.size,
                });
            }
        }
        self.counts[gt as usize * self.size + pred as usize] += by;
        self.total += by;
        Ok(())
    }

    /// Counts every pixel whose ground truth is not `ignore_id`.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap, ignore_id: u8) -> Result<()> {
        check_same_dims(pred, gt, "prediction vs ground truth")?;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g != ignore_id {
                self.bump(g, p, 1)?;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.size != self.size {
            return Err(Error::ShapeMismatch(format!(
                "merging {}x{} into {}x{} confusion matrix",
                other.size, other.size, self.size, self.size
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    /// Re-indexes rows and columns through `map` (which must stay below `size`).
    pub fn aggregate(&self, map: impl Fn(usize) -> usize) -> ConfusionMatrix {
        let mut out = ConfusionMatrix::new(self.size);
        for g in 0..self.size {
            for p in 0..self.size {
                let v = self.get(g, p);
                if v > 0 {
                    out.counts[map(g) * self.size + map(p)] += v;
                }
            }
        }
        out.total = self.total;
        out
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.size).map(|g| self.get(g, c)).sum::<u64>() - self.get(c, c)
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        self.counts[c * self.size..(c + 1) * self.size].iter().sum::<u64>() - self.get(c, c)
    }

    /// `TP / (TP + FP + FN)`, or `None` when the class never occurs.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let tp = self.true_positives(c);
        let denom = tp + self.false_positives(c) + self.false_negatives(c);
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    /// Fraction of counted pixels on the diagonal.
    pub fn pixel_accuracy(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        (0..self.size).map(|c| self.get(c, c)).sum::<u64>() as f64 / self.total as f64
    }
}

/// Per-class IoU values and their mean over evaluable classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub per_class: BTreeMap<u8, Option<f64>>,
    pub mean: Option<f64>,
}

impl IouReport {
    fn from_values(values: impl IntoIterator<Item = (u8, Option<f64>)>) -> Self {
        let per_class: BTreeMap<u8, Option<f64>> = values.into_iter().collect();
        let present: Vec<f64> = per_class.values().flatten().copied().collect();
        let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        Self { per_class, mean }
    }
}

/// IoU of each listed class; classes absent from both ground truth and
/// predictions are left out of the mean.
pub fn class_iou(conf: &ConfusionMatrix, classes: &[u8]) -> IouReport {
    IouReport::from_values(classes.iter().map(|&c| (c, conf.iou(c as usize))))
}

fn category_index(space: &LabelSpace, label: usize) -> usize {
    space
        .category_of(label as u8)
        .map_or(label, |c| c.index() as usize)
}

fn driving_category_ids() -> Vec<u8> {
    Category::DRIVING.iter().map(|c| c.index()).collect()
}

/// Category IoU over the seven driving categories, aggregated from a
/// class-level confusion matrix.
pub fn category_iou(conf: &ConfusionMatrix, space: &LabelSpace) -> IouReport {
    let collapsed = conf.aggregate(|l| category_index(space, l));
    class_iou(&collapsed, &driving_category_ids())
}

/// Category IoU computed from maps remapped to categories first.
pub fn category_iou_from_maps(
    pairs: &[(LabelMap, LabelMap)],
    space: &LabelSpace,
) -> Result<IouReport> {
    let mut conf = ConfusionMatrix::for_space(space);
    for (pred, gt) in pairs {
        conf.accumulate(&space.class_to_category(pred), &space.class_to_category(gt), space.ignore_id())?;
    }
    Ok(class_iou(&conf, &driving_category_ids()))
}

#[derive(Clone, Debug, Default)]
struct InstanceRecord {
    size: u64,
    tp: u64,
}

/// Accumulates what iIoU needs over any number of images.
#[derive(Clone, Debug)]
pub struct InstanceIouAccumulator {
    instance_classes: Vec<bool>,
    conf: ConfusionMatrix,
    /// (class, image, instance id) -> record
    instances: BTreeMap<(u8, usize, u16), InstanceRecord>,
    images: usize,
}

impl InstanceIouAccumulator {
    /// `instance_classes[l]` tells whether label `l` carries instance ids.
    pub fn new(instance_classes: Vec<bool>) -> Self {
        let size = instance_classes.len();
        Self {
            instance_classes,
            conf: ConfusionMatrix::new(size),
            instances: BTreeMap::new(),
            images: 0,
        }
    }

    pub fn for_classes(space: &LabelSpace) -> Self {
        let mut flags = vec![false; space.num_labels()];
        for c in space.classes() {
            flags[c.id as usize] = c.has_instances;
        }
        Self::new(flags)
    }

    /// For category maps: human and vehicle carry instances.
    pub fn for_categories(space: &LabelSpace) -> Self {
        let mut flags = vec![false; space.num_labels()];
        for c in Category::ALL {
            flags[c.index() as usize] = c.has_instances();
        }
        Self::new(flags)
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap, instances: &InstanceMap, ignore_id: u8) -> Result<()> {
        check_same_dims(pred, gt, "prediction vs ground truth")?;
        check_same_dims(gt, instances, "ground truth vs instances")?;
        let mut local = ConfusionMatrix::new(self.conf.size());
        local.accumulate(pred, gt, ignore_id)?;
        let image = self.images;
        let mut found = BTreeMap::new();
        for ((&p, &g), &inst) in pred.data().iter().zip(gt.data()).zip(instances.data()) {
            if g == ignore_id || !self.instance_classes[g as usize] {
                continue;
            }
            if inst == 0 {
                return Err(Error::MissingInstances { class: g });
            }
            let rec: &mut InstanceRecord = found.entry((g, image, inst)).or_default();
            rec.size += 1;
            if p == g {
                rec.tp += 1;
            }
        }
        self.conf.merge(&local)?;
        self.instances.extend(found);
        self.images += 1;
        Ok(())
    }

    pub fn confusion(&self) -> &ConfusionMatrix {
        &self.conf
    }

    /// iIoU of class `c`; `None` when the class never occurs.
    pub fn iiou(&self, c: u8) -> Option<f64> {
        if !self.instance_classes[c as usize] {
            return self.conf.iou(c as usize);
        }
        let recs: Vec<&InstanceRecord> = self
            .instances
            .range((c, 0, 0)..=(c, usize::MAX, u16::MAX))
            .map(|(_, r)| r)
            .collect();
        let fp = self.conf.false_positives(c as usize) as f64;
        if recs.is_empty() {
            return (fp > 0.0).then_some(0.0);
        }
        let avg = recs.iter().map(|r| r.size).sum::<u64>() as f64 / recs.len() as f64;
        let mut itp = 0.0;
        let mut ifn = 0.0;
        for r in recs {
            let w = avg / r.size as f64;
            itp += w * r.tp as f64;
            ifn += w * (r.size - r.tp) as f64;
        }
        Some(itp / (itp + fp + ifn))
    }

    pub fn report(&self, classes: &[u8]) -> IouReport {
        IouReport::from_values(classes.iter().map(|&c| (c, self.iiou(c))))
    }
}

/// iIoU of every label of a single image.
pub fn instance_iou(
    pred: &LabelMap,
    gt: &LabelMap,
    instances: &InstanceMap,
    instance_classes: Vec<bool>,
    ignore_id: u8,
) -> Result<Vec<Option<f64>>> {
    let n = instance_classes.len();
    let mut acc = InstanceIouAccumulator::new(instance_classes);
    acc.add(pred, gt, instances, ignore_id)?;
    Ok((0..n).map(|c| acc.iiou(c as u8)).collect())
}

/// Applies the negative-image credit: a prediction counts as the ground-truth
/// class when it is exact, belongs to the other class group, or is a
/// negative class.
pub fn credit_negative_predictions(pred: &LabelMap, gt: &LabelMap, space: &LabelSpace) -> Result<LabelMap> {
    check_same_dims(pred, gt, "prediction vs ground truth")?;
    let data = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| {
            if g == space.ignore_id() {
                return p;
            }
            let foreign = match (space.group_of(p), space.group_of(g)) {
                (Some(pg), Some(gg)) => pg != gg,
                _ => false,
            };
            if foreign || space.is_negative(p) { g } else { p }
        })
        .collect();
    LabelMap::new(pred.height(), pred.width(), data)
}

/// Confusion contribution of a negative image under the credit rule.
pub fn score_negative_image(pred: &LabelMap, gt: &LabelMap, space: &LabelSpace) -> Result<ConfusionMatrix> {
    let credited = credit_negative_predictions(pred, gt, space)?;
    let mut conf = ConfusionMatrix::for_space(space);
    conf.accumulate(&credited, gt, space.ignore_id())?;
    Ok(conf)
}

/// Predicted object-class pixels split by class group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub driving: u64,
    pub indoor: u64,
}

impl GroupCounts {
    pub fn add_map(&mut self, pred: &LabelMap, space: &LabelSpace) {
        for &p in pred.data() {
            match space.group_of(p) {
                Some(Group::Driving) => self.driving += 1,
                Some(Group::Indoor) => self.indoor += 1,
                None => {}
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.driving + self.indoor
    }

    /// Fractions (driving, indoor); zero when no object pixel was predicted.
    pub fn fractions(&self) -> (f64, f64) {
        let t = self.total();
        if t == 0 {
            return (0.0, 0.0);
        }
        (self.driving as f64 / t as f64, self.indoor as f64 / t as f64)
    }

    pub fn foreign_fraction(&self, home: Group) -> f64 {
        let (d, i) = self.fractions();
        match home {
            Group::Driving => i,
            Group::Indoor => d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncidenceRow {
    pub dataset: String,
    pub home: Group,
    pub counts: GroupCounts,
}

/// Incidence of driving and indoor predictions per dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IncidenceReport {
    pub rows: Vec<IncidenceRow>,
}

impl IncidenceReport {
    /// Tab-separated table with columns dataset, driving classes (%), indoor classes (%).
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("dataset\tdriving classes (%)\tindoor classes (%)\n");
        for row in &self.rows {
            let (d, i) = row.counts.fractions();
            let _ = writeln!(out, "{}\t{:.3}\t{:.3}", row.dataset, 100.0 * d, 100.0 * i);
        }
        out
    }
}

/// Counts, for predictions made on one dataset, how many object-class pixels
/// fall in each group. The foreign fraction is the share outside `home`.
pub fn foreign_incidence<'a>(
    dataset: &str,
    preds: impl IntoIterator<Item = &'a LabelMap>,
    home: Group,
    space: &LabelSpace,
) -> IncidenceRow {
    let mut counts = GroupCounts::default();
    for p in preds {
        counts.add_map(p, space);
    }
    IncidenceRow {
        dataset: dataset.to_string(),
        home,
        counts,
    }
}

/// Pixel-level outcome on negative images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeSummary {
    pub pixels: u64,
    pub errors: u64,
}

impl NegativeSummary {
    pub fn from_confusion(conf: &ConfusionMatrix) -> Self {
        let correct: u64 = (0..conf.size()).map(|c| conf.get(c, c)).sum();
        Self {
            pixels: conf.total_pixels(),
            errors: conf.total_pixels() - correct,
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.pixels == 0 {
            return 0.0;
        }
        1.0 - self.errors as f64 / self.pixels as f64
    }
}

/// Per-class evaluation table plus summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub images: usize,
    pub negative_images: usize,
    pub pixel_accuracy: f64,
    pub class_iou: IouReport,
    /// Present when instance maps were available.
    pub class_iiou: Option<IouReport>,
    /// Present for driving datasets.
    pub category_iou: Option<IouReport>,
    pub category_iiou: Option<IouReport>,
    pub negative: Option<NegativeSummary>,
}

impl EvalReport {
    /// Tab-separated table: class, IoU, iIoU, category, category IoU.
    pub fn to_tsv(&self, space: &LabelSpace) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.4}", v));
        let lookup = |r: &Option<IouReport>, id: u8| r.as_ref().and_then(|r| r.per_class.get(&id).copied().flatten());
        let mut out = String::from("class\tIoU\tiIoU\tcategory\tcategory IoU\n");
        for (&c, &iou) in &self.class_iou.per_class {
            let Some(info) = space.class(c) else { continue };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                info.name,
                fmt(iou),
                fmt(lookup(&self.class_iiou, c)),
                info.category,
                fmt(lookup(&self.category_iou, info.category.index()))
            );
        }
        let _ = writeln!(
            out,
            "mean\t{}\t{}\t-\t{}",
            fmt(self.class_iou.mean),
            fmt(self.class_iiou.as_ref().and_then(|r| r.mean)),
            fmt(self.category_iou.as_ref().and_then(|r| r.mean))
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelspace::build_default_space;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let gt = LabelMap::from_fn(4, 4, |y, x| ((y + x) % 3) as u8);
        let mut conf = ConfusionMatrix::new(3);
        conf.accumulate(&gt, &gt, 255).unwrap();
        for g in 0..3 {
            for p in 0..3 {
                if g != p {
                    assert_eq!(conf.get(g, p), 0);
                }
            }
        }
        assert_eq!(conf.total_pixels(), 16);
        let r = class_iou(&conf, &[0, 1, 2]);
        assert!(r.per_class.values().all(|&v| v == Some(1.0)));
    }

    #[test]
    fn ignored_gt_leaves_matrix_unchanged() {
        let mut conf = ConfusionMatrix::new(3);
        conf.accumulate(&LabelMap::filled(2, 2, 1), &LabelMap::filled(2, 2, 255), 255).unwrap();
        assert_eq!(conf, ConfusionMatrix::new(3));
    }

    #[test]
    fn hand_tallied_2x2() {
        // gt  = [0 1 / 1 2], pred = [0 2 / 1 1]
        let gt = LabelMap::new(2, 2, vec![0, 1, 1, 2]).unwrap();
        let pred = LabelMap::new(2, 2, vec![0, 2, 1, 1]).unwrap();
        let mut conf = ConfusionMatrix::new(3);
        conf.accumulate(&pred, &gt, 255).unwrap();
        let expected = [[1, 0, 0], [0, 1, 1], [0, 1, 0]];
        for g in 0..3 {
            for p in 0..3 {
                assert_eq!(conf.get(g, p), expected[g][p]);
            }
        }
    }

    #[test]
    fn iou_formula() {
        // class 0: TP 3, FP 1, FN 1
        let gt = LabelMap::new(1, 5, vec![0, 0, 0, 0, 1]).unwrap();
        let pred = LabelMap::new(1, 5, vec![0, 0, 0, 1, 0]).unwrap();
        let mut conf = ConfusionMatrix::new(3);
        conf.accumulate(&pred, &gt, 255).unwrap();
        assert_eq!(conf.iou(0), Some(0.6));
        let r = class_iou(&conf, &[0, 1, 2]);
        assert_eq!(r.per_class[&2], None);
        // mean over classes 0 and 1 only
        assert_eq!(r.mean, Some((0.6 + 0.0) / 2.0));
    }

    #[test]
    fn category_collapse() {
        let s = build_default_space();
        let road = LabelMap::filled(2, 2, 0);
        let sidewalk = LabelMap::filled(2, 2, 1);
        let r = category_iou_from_maps(&[(road.clone(), sidewalk.clone())], &s).unwrap();
        assert_eq!(r.per_class[&Category::Flat.index()], Some(1.0));
        let mut conf = ConfusionMatrix::for_space(&s);
        conf.accumulate(&road, &sidewalk, 255).unwrap();
        assert_eq!(category_iou(&conf, &s), r);

        let car = LabelMap::filled(2, 2, 13);
        let truck = LabelMap::filled(2, 2, 14);
        let r = category_iou_from_maps(&[(truck, car)], &s).unwrap();
        assert_eq!(r.per_class[&Category::Vehicle.index()], Some(1.0));
    }

    #[test]
    fn category_mixed_hand_case() {
        let s = build_default_space();
        // gt: road, car, person, sky ; pred: sidewalk, person, person, building
        let gt = LabelMap::new(1, 4, vec![0, 13, 11, 10]).unwrap();
        let pred = LabelMap::new(1, 4, vec![1, 11, 11, 2]).unwrap();
        let r = category_iou_from_maps(&[(pred, gt)], &s).unwrap();
        // flat: TP1 -> 1; vehicle: FN1 -> 0; human: TP1 FP1 -> 0.5; sky FN1 -> 0; construction FP1 -> 0
        assert_eq!(r.per_class[&Category::Flat.index()], Some(1.0));
        assert_eq!(r.per_class[&Category::Vehicle.index()], Some(0.0));
        assert_eq!(r.per_class[&Category::Human.index()], Some(0.5));
        assert_eq!(r.per_class[&Category::Sky.index()], Some(0.0));
        assert_eq!(r.per_class[&Category::Construction.index()], Some(0.0));
        assert_eq!(r.per_class[&Category::Nature.index()], None);
        assert_eq!(r.mean, Some(1.5 / 5.0));
    }

    fn flags(n: usize, on: &[usize]) -> Vec<bool> {
        (0..n).map(|i| on.contains(&i)).collect()
    }

    #[test]
    fn iiou_single_instance_perfect() {
        let gt = LabelMap::new(1, 4, vec![1, 1, 0, 0]).unwrap();
        let inst = InstanceMap::new(1, 4, vec![5, 5, 0, 0]).unwrap();
        let v = instance_iou(&gt, &gt, &inst, flags(2, &[1]), 255).unwrap();
        assert_eq!(v[1], Some(1.0));
        assert_eq!(v[0], Some(1.0));
    }

    #[test]
    fn iiou_penalizes_missed_small_instance() {
        // instance A: 100 px, predicted; instance B: 10 px, missed (predicted 0)
        let gt = LabelMap::filled(10, 11, 1);
        let inst = InstanceMap::from_fn(10, 11, |_, x| if x < 10 { 1 } else { 2 });
        let pred = LabelMap::from_fn(10, 11, |_, x| if x < 10 { 1 } else { 0 });
        let v = instance_iou(&pred, &gt, &inst, flags(2, &[1]), 255).unwrap();
        let iou = 100.0 / 110.0;
        // avg size 55: wA = 0.55, wB = 5.5; iTP = 55, iFN = 55
        let iiou = 55.0 / (55.0 + 0.0 + 55.0);
        assert!((v[1].unwrap() - iiou).abs() < 1e-12);
        assert!(v[1].unwrap() < iou);
        let mut conf = ConfusionMatrix::new(2);
        conf.accumulate(&pred, &gt, 255).unwrap();
        assert_eq!(conf.iou(1), Some(iou));
    }

    #[test]
    fn iiou_equals_iou_without_instances() {
        let gt = LabelMap::new(1, 4, vec![0, 0, 1, 1]).unwrap();
        let pred = LabelMap::new(1, 4, vec![0, 1, 1, 1]).unwrap();
        let inst = InstanceMap::filled(1, 4, 0);
        let v = instance_iou(&pred, &gt, &inst, flags(2, &[]), 255).unwrap();
        let mut conf = ConfusionMatrix::new(2);
        conf.accumulate(&pred, &gt, 255).unwrap();
        assert_eq!(v[0], conf.iou(0));
        assert_eq!(v[1], conf.iou(1));
    }

    #[test]
    fn iiou_missing_instances() {
        let gt = LabelMap::filled(1, 2, 1);
        let inst = InstanceMap::new(1, 2, vec![3, 0]).unwrap();
        assert!(matches!(
            instance_iou(&gt, &gt, &inst, flags(2, &[1]), 255),
            Err(Error::MissingInstances { class: 1 })
        ));
    }

    #[test]
    fn negative_image_credit() {
        let s = build_default_space();
        // driving gt, indoor predictions everywhere
        let gt = LabelMap::new(1, 3, vec![0, 2, 13]).unwrap();
        let pred = LabelMap::new(1, 3, vec![20, 25, 38]).unwrap();
        let conf = score_negative_image(&pred, &gt, &s).unwrap();
        assert_eq!(conf.pixel_accuracy(), 1.0);
        // exact and Void predictions are credited
        let pred = LabelMap::new(1, 3, vec![0, 39, 13]).unwrap();
        assert_eq!(score_negative_image(&pred, &gt, &s).unwrap().pixel_accuracy(), 1.0);
        // wrong driving class stays an error
        let gt = LabelMap::new(1, 2, vec![0, 2]).unwrap();
        let pred = LabelMap::new(1, 2, vec![0, 3]).unwrap();
        let conf = score_negative_image(&pred, &gt, &s).unwrap();
        assert_eq!(conf.get(2, 3), 1);
        assert_eq!(conf.get(0, 0), 1);
    }

    #[test]
    fn incidence() {
        let s = build_default_space();
        let home = LabelMap::filled(10, 10, 0);
        let row = foreign_incidence("cityscapes", [&home], Group::Driving, &s);
        assert_eq!(row.counts.foreign_fraction(Group::Driving), 0.0);
        let mut preds = vec![LabelMap::filled(10, 10, 2); 10];
        preds[3].set(4, 4, 30);
        let row = foreign_incidence("cityscapes", &preds, Group::Driving, &s);
        assert_eq!(row.counts.foreign_fraction(Group::Driving), 0.001);
        let report = IncidenceReport { rows: vec![row] };
        let tsv = report.to_tsv();
        assert_eq!(tsv.lines().next().unwrap(), "dataset\tdriving classes (%)\tindoor classes (%)");
        assert_eq!(tsv.lines().nth(1).unwrap(), "cityscapes\t99.900\t0.100");
    }

    #[test]
    fn merge_checks_size() {
        let mut a = ConfusionMatrix::new(2);
        assert!(a.merge(&ConfusionMatrix::new(3)).is_err());
    }
}
