//! Whole-image inference and dataset evaluation.

use serde::{Deserialize, Serialize};

use crate::dataset_io::Sample;
use crate::error::{Error, Result};
use crate::grid::LabelMap;
use crate::labelspace::{Group, LabelSpace, RemapStrategy};
use crate::metrics::{
    category_iou, class_iou, credit_negative_predictions, ConfusionMatrix, EvalReport, InstanceIouAccumulator,
    NegativeSummary,
};
use crate::model::{Model, INPUT_DIVISOR};
use crate::ops::resize_bilinear;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub strategy: RemapStrategy,
    /// Images are resized by this factor before inference.
    pub eval_scale: f64,
    /// Score negative images with the foreign/negative credit rule.
    pub negative_rule: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            strategy: RemapStrategy::auto_void(),
            eval_scale: 1.0,
            negative_rule: true,
        }
    }
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Pads a `[1, 3, H, W]` image at the bottom and right with its channel means
/// so both sides are multiples of the input divisor.
fn pad_to_divisor(image: &Tensor) -> Tensor {
    let [_, c, h, w] = image.shape();
    let (ph, pw) = (round_up(h, INPUT_DIVISOR), round_up(w, INPUT_DIVISOR));
    if (ph, pw) == (h, w) {
        return image.clone();
    }
    let means: Vec<f64> = (0..c)
        .map(|ci| image.plane(0, ci).iter().sum::<f64>() / (h * w) as f64)
        .collect();
    Tensor::from_fn([1, c, ph, pw], |[_, ci, y, x]| {
        if y < h && x < w {
            image.at([0, ci, y, x])
        } else {
            means[ci]
        }
    })
}

/// Unified-id prediction of a single `[1, 3, H, W]` image at its own size.
pub fn predict_image(model: &Model, image: &Tensor, eval_scale: f64) -> Result<LabelMap> {
    if !(eval_scale > 0.0 && eval_scale.is_finite()) {
        return Err(Error::config("eval_scale", "must be positive"));
    }
    let [_, _, h, w] = image.shape();
    let scaled = if eval_scale == 1.0 {
        image.clone()
    } else {
        let sh = ((h as f64 * eval_scale).round() as usize).max(1);
        let sw = ((w as f64 * eval_scale).round() as usize).max(1);
        resize_bilinear(image, sh, sw)
    };
    let [_, _, sh, sw] = scaled.shape();
    let padded = pad_to_divisor(&scaled);
    let [_, _, ph, pw] = padded.shape();
    let out = model.infer(&padded)?;
    // logits cover the padded canvas; upsample to it, then cut the image region
    let full = resize_bilinear(&out.logits_q, ph, pw);
    let cropped = Tensor::from_fn([1, full.channels(), sh, sw], |[_, c, y, x]| full.at([0, c, y, x]));
    let cropped = if (sh, sw) == (h, w) {
        cropped
    } else {
        resize_bilinear(&cropped, h, w)
    };
    Ok(crate::model::argmax_maps(&cropped).remove(0))
}

/// Scores unified-id predictions against samples loaded for evaluation.
pub fn evaluate_predictions(
    dataset_id: &str,
    preds: &[LabelMap],
    samples: &[Sample],
    space: &LabelSpace,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::config("dataset", format!("dataset `{dataset_id}` has no samples to evaluate")));
    }
    if preds.len() != samples.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} samples",
            preds.len(),
            samples.len()
        )));
    }
    let map = space.dataset(dataset_id)?;
    let driving = map.group() == Group::Driving;
    let ignore = space.ignore_id();
    let mut conf = ConfusionMatrix::for_space(space);
    let mut negative = ConfusionMatrix::for_space(space);
    let mut class_inst = InstanceIouAccumulator::for_classes(space);
    let mut cat_inst = InstanceIouAccumulator::for_categories(space);
    let mut all_instances = true;
    let mut negatives = 0;
    for (pred, sample) in preds.iter().zip(samples) {
        let resolved = space.resolve_foreign(pred, dataset_id, &options.strategy)?;
        let scored = if sample.is_negative && options.negative_rule {
            credit_negative_predictions(&resolved, &sample.labels, space)?
        } else {
            resolved
        };
        conf.accumulate(&scored, &sample.labels, ignore)?;
        if sample.is_negative {
            negatives += 1;
            negative.accumulate(&scored, &sample.labels, ignore)?;
        }
        match &sample.instances {
            Some(inst) if all_instances => {
                class_inst.add(&scored, &sample.labels, inst, ignore)?;
                if driving {
                    cat_inst.add(
                        &space.class_to_category(&scored),
                        &space.class_to_category(&sample.labels),
                        inst,
                        ignore,
                    )?;
                }
            }
            _ => all_instances = false,
        }
    }
    let classes = map.classes();
    let categories: Vec<u8> = crate::labelspace::Category::DRIVING.iter().map(|c| c.index()).collect();
    Ok(EvalReport {
        dataset: dataset_id.to_string(),
        images: samples.len(),
        negative_images: negatives,
        pixel_accuracy: conf.pixel_accuracy(),
        class_iou: class_iou(&conf, &classes),
        class_iiou: all_instances.then(|| class_inst.report(&classes)),
        category_iou: driving.then(|| category_iou(&conf, space)),
        category_iiou: (driving && all_instances).then(|| cat_inst.report(&categories)),
        negative: (negatives > 0).then(|| NegativeSummary::from_confusion(&negative)),
    })
}

/// Predicts every sample and scores the predictions.
pub fn evaluate(
    model: &Model,
    dataset_id: &str,
    samples: &[Sample],
    space: &LabelSpace,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let preds = samples
        .iter()
        .map(|s| predict_image(model, &s.image, options.eval_scale))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(dataset_id, &preds, samples, space, options)
}
