//! Training objectives.
//!
//! The main term is per-pixel softmax cross-entropy of the 1/4-resolution
//! logits after bilinear upsampling to the label resolution. The pyramid term
//! compares each auxiliary output at its own resolution against the class
//! histogram of the `N x N` label box under each cell. Labels are pooled down;
//! auxiliary predictions are never upsampled.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::LabelMap;
use crate::model::{ModelOutputs, OUTPUT_FACTOR};
use crate::ops;
use crate::tensor::Tensor;

/// Contribution weight of the pyramid term in the total loss.
pub const PYRAMID_WEIGHT: f64 = 0.4;

/// Ground-truth class distributions of one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDistribution {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// `height x width x classes`, row-major.
    pub dist: Vec<f64>,
    /// Cells whose box has at least one supervised pixel.
    pub valid: Vec<bool>,
}

impl BoxDistribution {
    pub fn cell(&self, y: usize, x: usize) -> &[f64] {
        let o = (y * self.width + x) * self.classes;
        &self.dist[o..o + self.classes]
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid[y * self.width + x]
    }
}

/// Box label distributions for every pyramid level of one label map.
#[derive(Clone, Debug)]
pub struct PyramidTargets {
    pub levels: BTreeMap<usize, BoxDistribution>,
}

impl PyramidTargets {
    pub fn new(labels: &LabelMap, factors: &[usize], classes: usize, ignore_id: u8) -> Result<Self> {
        let levels = factors
            .iter()
            .map(|&n| Ok((n, box_label_distribution(labels, n, classes, ignore_id)?)))
            .collect::<Result<_>>()?;
        Ok(Self { levels })
    }
}

/// Normalized histogram of non-ignored labels in each `n x n` box.
/// Boxes without supervised pixels are invalid and carry all zeros.
pub fn box_label_distribution(
    labels: &LabelMap,
    n: usize,
    classes: usize,
    ignore_id: u8,
) -> Result<BoxDistribution> {
    let (h, w) = labels.dims();
    if n == 0 || h % n != 0 || w % n != 0 {
        return Err(Error::BadShape(format!("{h}x{w} labels not divisible into {n}x{n} boxes")));
    }
    let (bh, bw) = (h / n, w / n);
    let mut counts = vec![0u32; bh * bw * classes];
    let mut totals = vec![0u32; bh * bw];
    for y in 0..h {
        for x in 0..w {
            let v = labels.get(y, x);
            if v == ignore_id {
                continue;
            }
            if v as usize >= classes {
                return Err(Error::LabelOutOfRange {
                    label: v,
                    num_classes: classes,
                });
            }
            let cell = (y / n) * bw + x / n;
            counts[cell * classes + v as usize] += 1;
            totals[cell] += 1;
        }
    }
    let dist = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let t = totals[i / classes];
            if t == 0 { 0.0 } else { c as f64 / t as f64 }
        })
        .collect();
    Ok(BoxDistribution {
        height: bh,
        width: bw,
        classes,
        dist,
        valid: totals.iter().map(|&t| t > 0).collect(),
    })
}

/// Log-softmax of the logits of one spatial position (class stride `hw`).
fn log_softmax_at(logits: &[f64], offset: usize, hw: usize, classes: usize, out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for c in 0..classes {
        max = max.max(logits[offset + c * hw]);
    }
    let mut sum = 0.0;
    for c in 0..classes {
        sum += (logits[offset + c * hw] - max).exp();
    }
    let lse = max + sum.ln();
    for (c, o) in out.iter_mut().enumerate().take(classes) {
        *o = logits[offset + c * hw] - lse;
    }
}

/// A scalar loss with its gradient with respect to one logits tensor.
#[derive(Clone, Debug)]
pub struct LossTerm {
    pub value: f64,
    pub grad: Tensor,
}

/// Cross-entropy between softmax predictions and per-cell target
/// distributions, averaged over valid cells of the whole batch.
pub fn distribution_cross_entropy(logits: &Tensor, targets: &[&BoxDistribution]) -> Result<LossTerm> {
    let [b, c, h, w] = logits.shape();
    if targets.len() != b {
        return Err(Error::ShapeMismatch(format!("{} targets for batch of {b}", targets.len())));
    }
    for t in targets {
        if (t.height, t.width, t.classes) != (h, w, c) {
            return Err(Error::ShapeMismatch(format!(
                "targets {}x{}x{} for logits {:?}",
                t.height,
                t.width,
                t.classes,
                logits.shape()
            )));
        }
    }
    let hw = h * w;
    let valid_cells: usize = targets.iter().map(|t| t.valid.iter().filter(|&&v| v).count()).sum();
    let mut grad = Tensor::zeros(logits.shape());
    if valid_cells == 0 {
        return Ok(LossTerm { value: 0.0, grad });
    }
    let norm = 1.0 / valid_cells as f64;
    let mut logp = vec![0.0; c];
    let mut total = 0.0;
    for (i, t) in targets.iter().enumerate() {
        let item = logits.item(i);
        let g = grad.item_mut(i);
        for pos in 0..hw {
            if !t.valid[pos] {
                continue;
            }
            log_softmax_at(item, pos, hw, c, &mut logp);
            let q = &t.dist[pos * c..(pos + 1) * c];
            let mut ce = 0.0;
            for k in 0..c {
                if q[k] > 0.0 {
                    ce -= q[k] * logp[k];
                }
                // d/dz_k = p_k * sum(q) - q_k with sum(q) = 1
                g[k * hw + pos] = (logp[k].exp() - q[k]) * norm;
            }
            total += ce;
        }
    }
    Ok(LossTerm {
        value: total * norm,
        grad,
    })
}

/// Per-level and combined pyramid loss.
#[derive(Clone, Debug)]
pub struct PyramidLoss {
    pub value: f64,
    pub per_level: BTreeMap<usize, f64>,
    pub grads: BTreeMap<usize, Tensor>,
}

/// Pyramid auxiliary loss. `weights` maps subsampling factor to level weight;
/// `None` averages the levels uniformly.
pub fn pyramid_loss(
    aux: &BTreeMap<usize, Tensor>,
    labels: &[LabelMap],
    weights: Option<&BTreeMap<usize, f64>>,
    ignore_id: u8,
) -> Result<PyramidLoss> {
    let mut value = 0.0;
    let mut per_level = BTreeMap::new();
    let mut grads = BTreeMap::new();
    let uniform = 1.0 / aux.len().max(1) as f64;
    for (&n, logits) in aux {
        let [b, c, h, w] = logits.shape();
        if labels.len() != b {
            return Err(Error::ShapeMismatch(format!("{} label maps for batch of {b}", labels.len())));
        }
        let targets = labels
            .iter()
            .map(|l| {
                if l.dims() != (h * n, w * n) {
                    return Err(Error::ShapeMismatch(format!(
                        "labels {}x{} for {h}x{w} logits at 1/{n}",
                        l.height(),
                        l.width()
                    )));
                }
                box_label_distribution(l, n, c, ignore_id)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&BoxDistribution> = targets.iter().collect();
        let mut term = distribution_cross_entropy(logits, &refs)?;
        let weight = match weights {
            Some(ws) => *ws
                .get(&n)
                .ok_or_else(|| Error::ShapeMismatch(format!("no weight for pyramid level {n}")))?,
            None => uniform,
        };
        value += weight * term.value;
        per_level.insert(n, term.value);
        term.grad.scale(weight);
        grads.insert(n, term.grad);
    }
    Ok(PyramidLoss {
        value,
        per_level,
        grads,
    })
}

/// Cross-entropy of bilinearly upsampled 1/4 logits against full-resolution
/// labels, averaged over supervised pixels.
pub fn main_loss(logits_q: &Tensor, labels: &[LabelMap], ignore_id: u8) -> Result<LossTerm> {
    let [b, c, h, w] = logits_q.shape();
    if labels.len() != b {
        return Err(Error::ShapeMismatch(format!("{} label maps for batch of {b}", labels.len())));
    }
    let (full_h, full_w) = (h * OUTPUT_FACTOR, w * OUTPUT_FACTOR);
    for l in labels {
        if l.dims() != (full_h, full_w) {
            return Err(Error::ShapeMismatch(format!(
                "labels {}x{} for logits {h}x{w} (expected {full_h}x{full_w})",
                l.height(),
                l.width()
            )));
        }
        if let Some(&bad) = l.data().iter().find(|&&v| v != ignore_id && v as usize >= c) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes: c,
            });
        }
    }
    let supervised: usize = labels
        .iter()
        .map(|l| l.data().iter().filter(|&&v| v != ignore_id).count())
        .sum();
    if supervised == 0 {
        return Ok(LossTerm {
            value: 0.0,
            grad: Tensor::zeros(logits_q.shape()),
        });
    }
    let full = ops::resize_bilinear(logits_q, full_h, full_w);
    let hw = full_h * full_w;
    let norm = 1.0 / supervised as f64;
    let mut grad_full = Tensor::zeros(full.shape());
    let mut logp = vec![0.0; c];
    let mut total = 0.0;
    for (i, l) in labels.iter().enumerate() {
        let item = full.item(i);
        let g = grad_full.item_mut(i);
        for (pos, &v) in l.data().iter().enumerate() {
            if v == ignore_id {
                continue;
            }
            log_softmax_at(item, pos, hw, c, &mut logp);
            total -= logp[v as usize];
            for k in 0..c {
                let target = if k == v as usize { 1.0 } else { 0.0 };
                g[k * hw + pos] = (logp[k].exp() - target) * norm;
            }
        }
    }
    Ok(LossTerm {
        value: total * norm,
        grad: ops::resize_bilinear_backward(logits_q.shape(), &grad_full),
    })
}

/// Loss values of one step, with gradients for back-propagation.
#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub main: f64,
    /// Unweighted pyramid loss (0 when disabled).
    pub pyramid: f64,
    pub pyramid_levels: BTreeMap<usize, f64>,
    pub total: f64,
    pub grad_logits_q: Tensor,
    /// Gradients of the auxiliary logits; empty when the pyramid term is disabled.
    pub grad_aux: BTreeMap<usize, Tensor>,
}

/// `main + pyramid_weight * pyramid`. A zero weight skips the pyramid term.
pub fn total_loss(
    outputs: &ModelOutputs,
    labels: &[LabelMap],
    pyramid_weight: f64,
    ignore_id: u8,
) -> Result<LossBreakdown> {
    let main = main_loss(&outputs.logits_q, labels, ignore_id)?;
    let (pyramid, pyramid_levels, grad_aux) = if pyramid_weight > 0.0 {
        let mut p = pyramid_loss(&outputs.aux, labels, None, ignore_id)?;
        for g in p.grads.values_mut() {
            g.scale(pyramid_weight);
        }
        (p.value, p.per_level, p.grads)
    } else {
        (0.0, BTreeMap::new(), BTreeMap::new())
    };
    Ok(LossBreakdown {
        main: main.value,
        pyramid,
        pyramid_levels,
        total: combine(main.value, pyramid, pyramid_weight),
        grad_logits_q: main.grad,
        grad_aux,
    })
}

/// The recomposition rule of the total loss.
pub fn combine(main: f64, pyramid: f64, pyramid_weight: f64) -> f64 {
    main + pyramid_weight * pyramid
}
