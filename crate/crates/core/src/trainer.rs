//! Optimization loop: Adam with a reduced learning rate for pretrained
//! parameters, schedule-driven mixed batches, logging, checkpoints and
//! periodic evaluation.
//!
//! All randomness of iteration `t` is derived from `(seed, t)`, and epoch
//! schedules from `(seed, epoch)`, so a run resumed from a checkpoint
//! continues exactly like an uninterrupted one.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{AdamState, Checkpoint};
use crate::dataset_io::{augment, stack_images, AugmentParams, Sample};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalOptions};
use crate::graph::{Gradients, Graph, ParamSet};
use crate::labelspace::{Group, LabelSpace};
use crate::losses::{total_loss, LossBreakdown};
use crate::metrics::EvalReport;
use crate::model::{Model, ModelOutputs, INPUT_DIVISOR};
use crate::sampler::{build_schedule, EpochSchedule};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub const HISTORY_FILE: &str = "history.tsv";
pub const EVAL_FILE: &str = "eval.tsv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub pretrained_lr_divisor: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Weight of the pyramid loss; 0 disables it.
    pub pyramid_weight: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub bn_momentum: f64,
    pub eval_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 4e-4,
            pretrained_lr_divisor: 4.0,
            batch_size: 8,
            iterations: 200_000,
            pyramid_weight: crate::losses::PYRAMID_WEIGHT,
            seed: 0,
            eval_every: 5_000,
            checkpoint_every: 10_000,
            bn_momentum: 0.1,
            eval_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.base_lr) {
            return Err(Error::config("train.base_lr", "must be positive"));
        }
        if !positive(self.pretrained_lr_divisor) {
            return Err(Error::config("train.pretrained_lr_divisor", "must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("train.batch_size", "must be at least 2"));
        }
        if !(self.pyramid_weight >= 0.0 && self.pyramid_weight.is_finite()) {
            return Err(Error::config("train.pyramid_weight", "must be nonnegative"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("train.eval_every", "must be positive"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("train.checkpoint_every", "must be positive"));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::config("train.bn_momentum", "must lie in (0, 1]"));
        }
        if !positive(self.eval_scale) {
            return Err(Error::config("train.eval_scale", "must be positive"));
        }
        Ok(())
    }
}

/// Adam with one learning rate per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    lrs: Vec<f64>,
    state: AdamState,
}

/// Fresh parameters train at `base_lr`, pretrained ones at
/// `base_lr / pretrained_lr_divisor`.
pub fn configure_optimizer(params: &ParamSet, config: &TrainConfig) -> Adam {
    let pretrained_lr = config.base_lr / config.pretrained_lr_divisor;
    Adam {
        lrs: params
            .params
            .iter()
            .map(|p| if p.pretrained { pretrained_lr } else { config.base_lr })
            .collect(),
        state: AdamState {
            step: 0,
            m: params.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        },
    }
}

impl Adam {
    pub fn with_state(params: &ParamSet, config: &TrainConfig, state: AdamState) -> Result<Self> {
        let mut adam = configure_optimizer(params, config);
        let fits = state.m.len() == params.params.len()
            && state.v.len() == params.params.len()
            && params
                .params
                .iter()
                .zip(state.m.iter().zip(&state.v))
                .all(|(p, (m, v))| m.len() == p.value.len() && v.len() == p.value.len());
        if !fits {
            return Err(Error::Checkpoint("optimizer state does not match the parameters".into()));
        }
        adam.state = state;
        Ok(adam)
    }

    pub fn lr(&self, index: usize) -> f64 {
        self.lrs[index]
    }

    /// Distinct learning rates, highest first.
    pub fn lr_groups(&self) -> Vec<f64> {
        let mut v = self.lrs.clone();
        v.sort_by(|a, b| b.total_cmp(a));
        v.dedup();
        v
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    /// One update; parameters without a gradient keep their value and moments.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) {
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (i, p) in params.params.iter_mut().enumerate() {
            let Some(g) = grads.get(i) else { continue };
            let lr = self.lrs[i];
            let m = &mut self.state.m[i];
            let v = &mut self.state.v[i];
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Loss and parameter gradients of one batch in training mode.
pub struct StepResult {
    pub loss: LossBreakdown,
    pub grads: Gradients,
    pub bn_updates: Vec<crate::graph::BnUpdate>,
}

pub fn compute_step(
    model: &Model,
    images: crate::tensor::Tensor,
    labels: &[crate::grid::LabelMap],
    pyramid_weight: f64,
    ignore_id: u8,
) -> Result<StepResult> {
    let mut g = Graph::new(model.params());
    let input = g.input(images);
    let vars = model.forward_graph(&mut g, input, true)?;
    let outputs = ModelOutputs {
        logits_q: g.value(vars.logits_q).clone(),
        aux: vars.aux.iter().map(|(&f, &v)| (f, g.value(v).clone())).collect(),
    };
    let loss = total_loss(&outputs, labels, pyramid_weight, ignore_id)?;
    let mut seeds = vec![(vars.logits_q, loss.grad_logits_q.clone())];
    for (f, grad) in &loss.grad_aux {
        seeds.push((vars.aux[f], grad.clone()));
    }
    let grads = g.backward(seeds)?;
    let bn_updates = g.bn_updates().to_vec();
    Ok(StepResult { loss, grads, bn_updates })
}

/// Materialized samples of one dataset.
#[derive(Clone, Debug)]
pub struct DomainData {
    pub id: String,
    pub group: Group,
    pub samples: Vec<Sample>,
}

/// One row of the metric history log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub main: f64,
    pub pyramid: f64,
    pub total: f64,
    pub lr: f64,
}

impl HistoryRow {
    pub const HEADER: &'static str = "iteration\tmain\tpyramid\ttotal\tlr";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.9}\t{:.9}\t{:.9}\t{:e}",
            self.iteration, self.main, self.pyramid, self.total, self.lr
        )
    }
}

fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const EPOCH_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;

/// Trainer state between iterations.
pub struct Trainer<'a> {
    pub model: Model,
    pub optimizer: Adam,
    /// Completed iterations.
    pub iteration: usize,
    config: TrainConfig,
    augment: AugmentParams,
    ratio: f64,
    space: &'a LabelSpace,
    data: &'a [DomainData],
    batches_per_epoch: usize,
    schedule: Option<(usize, EpochSchedule)>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: Model,
        config: TrainConfig,
        augment: AugmentParams,
        ratio: f64,
        space: &'a LabelSpace,
        data: &'a [DomainData],
    ) -> Result<Self> {
        let optimizer = configure_optimizer(model.params(), &config);
        Self::with_optimizer(model, optimizer, 0, config, augment, ratio, space, data)
    }

    /// Continues from a checkpoint produced by [`Trainer::checkpoint`].
    pub fn resume(
        checkpoint: &Checkpoint,
        config: TrainConfig,
        augment: AugmentParams,
        ratio: f64,
        space: &'a LabelSpace,
        data: &'a [DomainData],
    ) -> Result<Self> {
        let model = checkpoint.restore_model()?;
        let optimizer = match &checkpoint.optimizer {
            Some(state) => Adam::with_state(model.params(), &config, state.clone())?,
            None => configure_optimizer(model.params(), &config),
        };
        let iteration = checkpoint.iteration as usize;
        Self::with_optimizer(model, optimizer, iteration, config, augment, ratio, space, data)
    }

    #[allow(clippy::too_many_arguments)]
    fn with_optimizer(
        model: Model,
        optimizer: Adam,
        iteration: usize,
        config: TrainConfig,
        augment: AugmentParams,
        ratio: f64,
        space: &'a LabelSpace,
        data: &'a [DomainData],
    ) -> Result<Self> {
        config.validate()?;
        augment.validate()?;
        if !augment.crop.is_multiple_of(INPUT_DIVISOR) {
            return Err(Error::config(
                "augment.crop",
                format!("must be a multiple of {INPUT_DIVISOR}"),
            ));
        }
        let mut trainer = Self {
            model,
            optimizer,
            iteration,
            config,
            augment,
            ratio,
            space,
            data,
            batches_per_epoch: 0,
            schedule: None,
        };
        trainer.batches_per_epoch = trainer.epoch_schedule(0)?.num_batches();
        if trainer.batches_per_epoch == 0 {
            return Err(Error::config(
                "train.batch_size",
                "the training data does not fill a single batch",
            ));
        }
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.batches_per_epoch
    }

    fn epoch_schedule(&self, epoch: usize) -> Result<EpochSchedule> {
        let sizes: BTreeMap<String, usize> = self.data.iter().map(|d| (d.id.clone(), d.samples.len())).collect();
        let groups: BTreeMap<String, Group> = self.data.iter().map(|d| (d.id.clone(), d.group)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, EPOCH_STREAM, epoch as u64));
        build_schedule(&sizes, &groups, self.ratio, self.config.batch_size, &mut rng)
    }

    /// Augmented samples of the batch used by iteration `t`.
    pub fn batch_samples(&mut self, t: usize) -> Result<Vec<Sample>> {
        let epoch = t / self.batches_per_epoch;
        if self.schedule.as_ref().is_none_or(|(e, _)| *e != epoch) {
            self.schedule = Some((epoch, self.epoch_schedule(epoch)?));
        }
        let (_, schedule) = self.schedule.as_ref().expect("just built");
        let b = t % self.batches_per_epoch;
        let entries = &schedule.entries[b * schedule.batch_size..(b + 1) * schedule.batch_size];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, AUGMENT_STREAM, t as u64));
        entries
            .iter()
            .map(|e| {
                let data = self
                    .data
                    .iter()
                    .find(|d| d.id == e.dataset)
                    .expect("schedule only names known datasets");
                Ok(augment(&data.samples[e.index], &self.augment, self.space.ignore_id(), &mut rng))
            })
            .collect()
    }

    /// Runs one iteration and returns its log row.
    pub fn step(&mut self) -> Result<HistoryRow> {
        let t = self.iteration;
        let batch = self.batch_samples(t)?;
        let images = stack_images(&batch)?;
        let labels: Vec<_> = batch.into_iter().map(|s| s.labels).collect();
        let result = compute_step(&self.model, images, &labels, self.config.pyramid_weight, self.space.ignore_id())?;
        let row = HistoryRow {
            iteration: t + 1,
            main: result.loss.main,
            pyramid: result.loss.pyramid,
            total: result.loss.total,
            lr: self.config.base_lr,
        };
        let grads_finite = result.grads.params.iter().flatten().all(|g| g.all_finite());
        if !row.total.is_finite() || !grads_finite {
            return Err(Error::NonFiniteLoss { iteration: t + 1 });
        }
        self.optimizer.step(self.model.params_mut(), &result.grads);
        self.model.update_running_stats(&result.bn_updates, self.config.bn_momentum);
        self.iteration += 1;
        Ok(row)
    }

    pub fn checkpoint(&self, config_echo: serde_json::Value) -> Checkpoint {
        Checkpoint::from_model(
            &self.model,
            Some(self.optimizer.state()),
            self.iteration as u64,
            config_echo,
        )
    }
}

/// Evaluation data of one dataset (labels loaded with negatives kept).
#[derive(Clone, Debug)]
pub struct EvalData {
    pub id: String,
    pub samples: Vec<Sample>,
}

/// Everything [`train`] needs besides the model.
pub struct TrainJob<'a> {
    pub space: &'a LabelSpace,
    pub train: &'a [DomainData],
    pub val: &'a [EvalData],
    pub config: TrainConfig,
    pub augment: AugmentParams,
    pub ratio: f64,
    pub eval: EvalOptions,
    /// Directory receiving logs and checkpoints; nothing is written when `None`.
    pub output_dir: Option<PathBuf>,
    pub config_echo: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct EvalRecord {
    pub iteration: usize,
    pub report: EvalReport,
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<HistoryRow>,
    pub evals: Vec<EvalRecord>,
    pub final_checkpoint: Checkpoint,
}

pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("checkpoint-{iteration:08}.ckpt"))
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";

fn append_line(path: &Path, header: &str, line: &str) -> Result<()> {
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    writeln!(f, "{line}")?;
    Ok(())
}

fn dump_state(dir: &Path, trainer: &Trainer, err: &Error) -> Result<()> {
    let norms: BTreeMap<&str, f64> = trainer
        .model
        .params()
        .params
        .iter()
        .map(|p| (p.name.as_str(), p.value.data().iter().map(|v| v * v).sum::<f64>().sqrt()))
        .collect();
    let dump = serde_json::json!({
        "error": err.to_string(),
        "iteration": trainer.iteration,
        "adam_step": trainer.optimizer.state().step,
        "parameter_norms": norms,
    });
    fs::write(dir.join("nonfinite_state.json"), serde_json::to_string_pretty(&dump)?)?;
    Ok(())
}

/// Trains `model` for `job.config.iterations` iterations (counting from
/// `start`, when resuming) and writes logs and checkpoints on schedule.
pub fn train(model: Model, resume_from: Option<&Checkpoint>, job: &TrainJob) -> Result<TrainOutcome> {
    let mut trainer = match resume_from {
        Some(ck) => Trainer::resume(ck, job.config.clone(), job.augment.clone(), job.ratio, job.space, job.train)?,
        None => Trainer::new(model, job.config.clone(), job.augment.clone(), job.ratio, job.space, job.train)?,
    };
    if let Some(dir) = &job.output_dir {
        fs::create_dir_all(dir)?;
        if resume_from.is_none() {
            for f in [HISTORY_FILE, EVAL_FILE] {
                if dir.join(f).exists() {
                    fs::remove_file(dir.join(f))?;
                }
            }
            trainer.checkpoint(job.config_echo.clone()).save(&checkpoint_path(dir, 0))?;
        }
    }
    let mut history = Vec::new();
    let mut evals = Vec::new();
    while trainer.iteration < job.config.iterations {
        let row = match trainer.step() {
            Ok(row) => row,
            Err(e @ Error::NonFiniteLoss { .. }) => {
                if let Some(dir) = &job.output_dir {
                    dump_state(dir, &trainer, &e)?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if let Some(dir) = &job.output_dir {
            append_line(&dir.join(HISTORY_FILE), HistoryRow::HEADER, &row.to_tsv())?;
        }
        history.push(row);
        let t = trainer.iteration;
        if t % job.config.eval_every == 0 || t == job.config.iterations {
            for val in job.val {
                let report = evaluate(&trainer.model, &val.id, &val.samples, job.space, &job.eval)?;
                if let Some(dir) = &job.output_dir {
                    let line = format!(
                        "{t}\t{}\t{:.6}\t{}",
                        val.id,
                        report.pixel_accuracy,
                        report.class_iou.mean.map_or("-".into(), |m| format!("{m:.6}"))
                    );
                    append_line(&dir.join(EVAL_FILE), "iteration\tdataset\tpixel_accuracy\tmiou", &line)?;
                }
                evals.push(EvalRecord { iteration: t, report });
            }
        }
        if let Some(dir) = &job.output_dir {
            if t % job.config.checkpoint_every == 0 {
                trainer.checkpoint(job.config_echo.clone()).save(&checkpoint_path(dir, t))?;
            }
        }
    }
    let final_checkpoint = trainer.checkpoint(job.config_echo.clone());
    if let Some(dir) = &job.output_dir {
        final_checkpoint.save(&dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainOutcome {
        model: trainer.model,
        history,
        evals,
        final_checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LabelMap;
    use crate::labelspace::build_default_space;
    use crate::model::ModelConfig;
    use crate::tensor::Tensor;

    #[test]
    fn learning_rate_groups() {
        let mut m = Model::new(ModelConfig::toy(4)).unwrap();
        let cfg = TrainConfig::default();
        assert_eq!(configure_optimizer(m.params(), &cfg).lr_groups(), vec![4e-4]);
        m.params_mut().params[0].pretrained = true;
        let adam = configure_optimizer(m.params(), &cfg);
        assert_eq!(adam.lr_groups(), vec![4e-4, 1e-4]);
        assert_eq!(adam.lr(0), 1e-4);
    }

    #[test]
    fn adam_step_moves_against_gradient() {
        // f(w) = (w - 3)^2 at w = [0, 5]
        let mut params = ParamSet::default();
        params.add("w", Tensor::new([1, 1, 1, 2], vec![0.0, 5.0]).unwrap());
        let cfg = TrainConfig {
            base_lr: 0.1,
            ..TrainConfig::default()
        };
        let mut adam = configure_optimizer(&params, &cfg);
        let w = params.params[0].value.data().to_vec();
        let g = Tensor::new([1, 1, 1, 2], w.iter().map(|w| 2.0 * (w - 3.0)).collect()).unwrap();
        adam.step(&mut params, &Gradients { params: vec![Some(g)] });
        let after = params.params[0].value.data();
        // the first bias-corrected step has magnitude lr
        assert!((after[0] - 0.1).abs() < 1e-6);
        assert!((after[1] - 4.9).abs() < 1e-6);
    }

    #[test]
    fn adam_skips_missing_gradients() {
        let mut params = ParamSet::default();
        params.add("w", Tensor::full([1, 1, 1, 1], 1.0));
        let mut adam = configure_optimizer(&params, &TrainConfig::default());
        adam.step(&mut params, &Gradients { params: vec![None] });
        assert_eq!(params.params[0].value.data(), &[1.0]);
        assert_eq!(adam.state().m[0], vec![0.0]);
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "train.batch_size"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn tiny_data() -> Vec<DomainData> {
        let mk = |id: &str, group: Group, class: u8, n: usize| DomainData {
            id: id.into(),
            group,
            samples: (0..n)
                .map(|i| Sample {
                    name: format!("{i}"),
                    image: Tensor::from_fn([1, 3, 64, 64], |[_, c, y, x]| ((c + y + x + i) % 5) as f64 / 5.0),
                    labels: LabelMap::from_fn(64, 64, |y, _| if y < 32 { class } else { class + 1 }),
                    instances: None,
                    dataset_id: id.into(),
                    is_negative: false,
                })
                .collect(),
        };
        vec![mk("cityscapes", Group::Driving, 0, 3), mk("scannet", Group::Indoor, 19, 2)]
    }

    fn toy_config(iterations: usize, pyramid_weight: f64) -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            iterations,
            pyramid_weight,
            seed: 11,
            eval_every: 1000,
            checkpoint_every: 1000,
            ..TrainConfig::default()
        }
    }

    fn augment_params() -> AugmentParams {
        AugmentParams {
            scale_min: 0.75,
            scale_max: 1.25,
            crop: 64,
            flip_prob: 0.5,
        }
    }

    fn job<'a>(space: &'a LabelSpace, data: &'a [DomainData], cfg: TrainConfig, dir: Option<PathBuf>) -> TrainJob<'a> {
        TrainJob {
            space,
            train: data,
            val: &[],
            config: cfg,
            augment: augment_params(),
            ratio: 2.0,
            eval: EvalOptions::default(),
            output_dir: dir,
            config_echo: serde_json::Value::Null,
        }
    }

    #[test]
    fn zero_iterations_writes_initial_checkpoint_only() {
        let space = build_default_space();
        let data = tiny_data();
        let dir = tempfile::tempdir().unwrap();
        let model = Model::new(ModelConfig::toy(39)).unwrap();
        let out = train(model, None, &job(&space, &data, toy_config(0, 0.4), Some(dir.path().into()))).unwrap();
        assert!(out.history.is_empty());
        assert!(checkpoint_path(dir.path(), 0).exists());
        assert!(!dir.path().join(HISTORY_FILE).exists());
    }

    #[test]
    fn pyramid_switch_is_logged() {
        let space = build_default_space();
        let data = tiny_data();
        for (w, positive) in [(0.0, false), (0.4, true)] {
            let model = Model::new(ModelConfig::toy(39)).unwrap();
            let out = train(model, None, &job(&space, &data, toy_config(2, w), None)).unwrap();
            assert_eq!(out.history.len(), 2);
            for row in &out.history {
                assert_eq!(row.pyramid > 0.0, positive);
                assert!(row.total.is_finite());
            }
        }
    }

    #[test]
    fn resume_is_bitwise() {
        let space = build_default_space();
        let data = tiny_data();
        let full = train(Model::new(ModelConfig::toy(39)).unwrap(), None, &job(&space, &data, toy_config(4, 0.4), None)).unwrap();
        let half = train(Model::new(ModelConfig::toy(39)).unwrap(), None, &job(&space, &data, toy_config(2, 0.4), None)).unwrap();
        let bytes = half.final_checkpoint.encode();
        let ck = Checkpoint::decode(&bytes).unwrap();
        let resumed = train(Model::new(ModelConfig::toy(39)).unwrap(), Some(&ck), &job(&space, &data, toy_config(4, 0.4), None)).unwrap();
        assert_eq!(resumed.final_checkpoint.encode(), full.final_checkpoint.encode());
        assert_eq!(&full.history[2..], &resumed.history[..]);
    }
}
