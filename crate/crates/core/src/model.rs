//! Ladder-style segmentation network.
//!
//! ```text
//! image ─ stem ─ F4 ─ stage1 ─ F8 ─ stage2 ─ F16 ─ stage3 ─ F32 ─ stage4 ─ F64
//!                 │            │              │              │             │
//!                 │            │              │              │            SPP ──────── aux/64
//!                 │            │              │              └── blend ◄── up2 ─────── aux/32
//!                 │            │              └──────────────── blend ◄── up2 ──────── aux/16
//!                 │            └─────────────────────────────── blend ◄── up2 ──────── aux/8
//!                 └──────────────────────────────────────────── blend ◄── up2 ── head ─ logits/4
//! ```
//!
//! Encoder stages are small dense blocks (pre-activation BN-ReLU-conv layers
//! whose outputs are concatenated) behind a transition that halves the
//! resolution. Each blend projects the skip with a 1x1 convolution, adds the
//! upsampled decoder features and applies a single 3x3 conv-BN-ReLU.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BnLayer, Graph, ParamSet, Var};
use crate::ops::{self, ConvGeometry};
use crate::tensor::Tensor;

/// Subsampling factors of the auxiliary outputs, coarsest first.
pub const AUX_FACTORS: [usize; 4] = [64, 32, 16, 8];
/// Subsampling factor of the main logits.
pub const OUTPUT_FACTOR: usize = 4;
/// Required divisor of input height and width.
pub const INPUT_DIVISOR: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Feature channels at 1/4, 1/8, 1/16, 1/32 and 1/64 resolution.
    pub encoder_stage_widths: Vec<usize>,
    /// Layers per dense block.
    pub dense_layers: usize,
    pub growth_rate: usize,
    pub decoder_width: usize,
    pub num_classes: usize,
    pub spp_grid: Vec<usize>,
    /// Channels of each pyramid pooling branch.
    pub spp_branch_width: usize,
    /// Weight-initialization seed.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_stage_widths: vec![64, 128, 192, 256, 320],
            dense_layers: 4,
            growth_rate: 16,
            decoder_width: 256,
            num_classes: 39,
            spp_grid: vec![1, 2, 3, 6],
            spp_branch_width: 64,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration for desk-scale experiments on 64..128 px inputs.
    pub fn toy(num_classes: usize) -> Self {
        Self {
            encoder_stage_widths: vec![16, 24, 32, 48, 64],
            dense_layers: 2,
            growth_rate: 8,
            decoder_width: 32,
            num_classes,
            spp_grid: vec![1],
            spp_branch_width: 16,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_stage_widths.len() != 5 {
            return Err(Error::config(
                "model.encoder_stage_widths",
                format!("expected 5 widths (1/4 .. 1/64), got {}", self.encoder_stage_widths.len()),
            ));
        }
        let dense = self.dense_layers * self.growth_rate;
        if self.encoder_stage_widths[0] == 0 {
            return Err(Error::config("model.encoder_stage_widths", "widths must be positive"));
        }
        for &w in &self.encoder_stage_widths[1..] {
            if w <= dense {
                return Err(Error::config(
                    "model.encoder_stage_widths",
                    format!("stage width {w} must exceed dense_layers * growth_rate = {dense}"),
                ));
            }
        }
        if self.decoder_width == 0 {
            return Err(Error::config("model.decoder_width", "must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("model.num_classes", "must be positive"));
        }
        if self.spp_grid.is_empty() || self.spp_grid.contains(&0) {
            return Err(Error::config("model.spp_grid", "needs at least one positive grid size"));
        }
        if self.spp_branch_width == 0 {
            return Err(Error::config("model.spp_branch_width", "must be positive"));
        }
        Ok(())
    }
}

/// Network outputs for a batch.
#[derive(Clone, Debug)]
pub struct ModelOutputs {
    /// Logits at 1/4 input resolution, `B x C x H/4 x W/4`.
    pub logits_q: Tensor,
    /// Auxiliary logits keyed by subsampling factor (8, 16, 32, 64).
    pub aux: BTreeMap<usize, Tensor>,
}

/// Graph handles of the outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct OutputVars {
    pub logits_q: Var,
    pub aux: BTreeMap<usize, Var>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvLayer {
    pub w: usize,
    pub b: Option<usize>,
    pub geometry: ConvGeometry,
}

#[derive(Clone, Debug)]
struct Stem {
    conv1: ConvLayer,
    bn1: BnLayer,
    conv2: ConvLayer,
    bn2: BnLayer,
}

#[derive(Clone, Debug)]
struct DenseLayer {
    bn: BnLayer,
    conv: ConvLayer,
}

#[derive(Clone, Debug)]
struct EncoderStage {
    transition_bn: BnLayer,
    transition: ConvLayer,
    layers: Vec<DenseLayer>,
}

#[derive(Clone, Debug)]
pub(crate) struct SppBlock {
    pub branches: Vec<(usize, ConvLayer)>,
    pub fuse: ConvLayer,
    pub fuse_bn: BnLayer,
}

/// Fusion point of one decoder stage.
#[derive(Clone, Debug)]
pub(crate) struct BlendUnit {
    pub project: ConvLayer,
    pub conv: ConvLayer,
    pub bn: BnLayer,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    stem: Stem,
    stages: Vec<EncoderStage>,
    spp: SppBlock,
    decoder: Vec<BlendUnit>,
    aux_heads: Vec<(usize, ConvLayer)>,
    head: ConvLayer,
}

struct Builder {
    params: ParamSet,
    rng: ChaCha8Rng,
}

impl Builder {
    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, bias: bool, gain: f64) -> ConvLayer {
        let fan_in = (cin * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("positive std");
        let w = Tensor::from_fn([cout, cin, kernel, kernel], |_| normal.sample(&mut self.rng));
        let w = self.params.add(format!("{name}.weight"), w);
        let b = bias.then(|| self.params.add(format!("{name}.bias"), Tensor::zeros([cout, 1, 1, 1])));
        ConvLayer {
            w,
            b,
            geometry: ConvGeometry {
                kernel,
                stride,
                pad: kernel / 2,
            },
        }
    }

    fn bn(&mut self, name: &str, channels: usize) -> BnLayer {
        BnLayer {
            gamma: self.params.add(format!("{name}.gamma"), Tensor::full([channels, 1, 1, 1], 1.0)),
            beta: self.params.add(format!("{name}.beta"), Tensor::zeros([channels, 1, 1, 1])),
            running_mean: self.params.add_buffer(format!("{name}.running_mean"), vec![0.0; channels]),
            running_var: self.params.add_buffer(format!("{name}.running_var"), vec![1.0; channels]),
        }
    }
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            params: ParamSet::default(),
            rng: ChaCha8Rng::seed_from_u64(config.init_seed),
        };
        let widths = &config.encoder_stage_widths;
        let (d, classes) = (config.decoder_width, config.num_classes);

        let stem = Stem {
            conv1: b.conv("encoder.stem.conv1", 3, widths[0], 3, 2, false, 2.0),
            bn1: b.bn("encoder.stem.bn1", widths[0]),
            conv2: b.conv("encoder.stem.conv2", widths[0], widths[0], 3, 2, false, 2.0),
            bn2: b.bn("encoder.stem.bn2", widths[0]),
        };

        let mut stages = Vec::new();
        for k in 1..5 {
            let prefix = format!("encoder.stage{k}");
            let base = widths[k] - config.dense_layers * config.growth_rate;
            let transition_bn = b.bn(&format!("{prefix}.transition.bn"), widths[k - 1]);
            let transition = b.conv(&format!("{prefix}.transition.conv"), widths[k - 1], base, 1, 1, false, 2.0);
            let layers = (0..config.dense_layers)
                .map(|l| {
                    let cin = base + l * config.growth_rate;
                    DenseLayer {
                        bn: b.bn(&format!("{prefix}.dense{l}.bn"), cin),
                        conv: b.conv(&format!("{prefix}.dense{l}.conv"), cin, config.growth_rate, 3, 1, false, 2.0),
                    }
                })
                .collect();
            stages.push(EncoderStage {
                transition_bn,
                transition,
                layers,
            });
        }

        let top = widths[4];
        let branches = config
            .spp_grid
            .iter()
            .map(|&grid| {
                (
                    grid,
                    b.conv(&format!("context.spp.grid{grid}"), top, config.spp_branch_width, 1, 1, true, 2.0),
                )
            })
            .collect::<Vec<_>>();
        let fused_in = top + branches.len() * config.spp_branch_width;
        let spp = SppBlock {
            branches,
            fuse: b.conv("context.spp.fuse.conv", fused_in, d, 1, 1, false, 2.0),
            fuse_bn: b.bn("context.spp.fuse.bn", d),
        };

        // decoder stages from 1/32 down to 1/4
        let decoder = (0..4)
            .map(|i| {
                let level = 3 - i;
                let factor = 4 << level;
                let prefix = format!("decoder.up{factor}");
                BlendUnit {
                    project: b.conv(&format!("{prefix}.project"), widths[level], d, 1, 1, false, 1.0),
                    conv: b.conv(&format!("{prefix}.blend.conv"), d, d, 3, 1, false, 2.0),
                    bn: b.bn(&format!("{prefix}.blend.bn"), d),
                }
            })
            .collect();

        let aux_heads = AUX_FACTORS
            .iter()
            .map(|&f| (f, b.conv(&format!("heads.aux{f}"), d, classes, 1, 1, true, 1.0)))
            .collect();
        let head = b.conv("heads.final", d, classes, 1, 1, true, 1.0);

        Ok(Self {
            config,
            params: b.params,
            stem,
            stages,
            spp,
            decoder,
            aux_heads,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Parameter indices used only by the auxiliary heads.
    pub fn aux_head_params(&self) -> Vec<usize> {
        self.aux_heads
            .iter()
            .flat_map(|(_, c)| std::iter::once(c.w).chain(c.b))
            .collect()
    }

    /// Copies encoder parameters with matching names and shapes from
    /// externally trained weights and marks them as pretrained.
    /// Returns the number of tensors loaded.
    pub fn load_encoder_weights(&mut self, source: &ParamSet) -> usize {
        let mut loaded = 0;
        for p in self.params.params.iter_mut().filter(|p| p.name.starts_with("encoder.")) {
            if let Some(src) = source.params.iter().find(|s| s.name == p.name) {
                if src.value.shape() == p.value.shape() {
                    p.value = src.value.clone();
                    p.pretrained = true;
                    loaded += 1;
                }
            }
        }
        for buf in self.params.buffers.iter_mut().filter(|b| b.name.starts_with("encoder.")) {
            if let Some(src) = source.buffers.iter().find(|s| s.name == buf.name) {
                if src.value.len() == buf.value.len() {
                    buf.value = src.value.clone();
                }
            }
        }
        loaded
    }

    /// Folds batch statistics recorded by a training-mode forward pass into
    /// the running averages.
    pub fn update_running_stats(&mut self, updates: &[crate::graph::BnUpdate], momentum: f64) {
        for u in updates {
            let unbiased = u.stats.unbiased_var();
            let mean = &mut self.params.buffers[u.layer.running_mean].value;
            for (r, &m) in mean.iter_mut().zip(&u.stats.mean) {
                *r = (1.0 - momentum) * *r + momentum * m;
            }
            let var = &mut self.params.buffers[u.layer.running_var].value;
            for (r, &v) in var.iter_mut().zip(&unbiased) {
                *r = (1.0 - momentum) * *r + momentum * v;
            }
        }
    }

    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        if c != 3 {
            return Err(Error::BadShape(format!("expected 3 input channels, got {c}")));
        }
        if h == 0 || w == 0 || h % INPUT_DIVISOR != 0 || w % INPUT_DIVISOR != 0 {
            return Err(Error::BadShape(format!(
                "input {h}x{w} must be a positive multiple of {INPUT_DIVISOR}"
            )));
        }
        Ok(())
    }

    fn conv(&self, g: &mut Graph, x: Var, c: &ConvLayer) -> Result<Var> {
        g.conv(x, c.w, c.b, c.geometry)
    }

    fn conv_bn_relu(&self, g: &mut Graph, x: Var, c: &ConvLayer, bn: BnLayer, training: bool) -> Result<Var> {
        let y = self.conv(g, x, c)?;
        let y = g.batch_norm(y, bn, training)?;
        Ok(g.relu(y))
    }

    fn bn_relu_conv(&self, g: &mut Graph, x: Var, bn: BnLayer, c: &ConvLayer, training: bool) -> Result<Var> {
        let y = g.batch_norm(x, bn, training)?;
        let y = g.relu(y);
        self.conv(g, y, c)
    }

    /// Pyramid pooling context block: pool to each grid, project, upsample,
    /// concatenate with the input and fuse to the decoder width.
    pub(crate) fn spp(&self, g: &mut Graph, features: Var, training: bool) -> Result<Var> {
        let [_, _, h, w] = g.value(features).shape();
        if let Some(&grid) = self.config.spp_grid.iter().max() {
            if grid > h || grid > w {
                return Err(Error::GridTooLarge { grid, height: h, width: w });
            }
        }
        let mut parts = vec![features];
        for (grid, conv) in &self.spp.branches {
            let pooled = g.adaptive_pool(features, *grid)?;
            let projected = self.conv(g, pooled, conv)?;
            let projected = g.relu(projected);
            parts.push(g.resize(projected, h, w));
        }
        let cat = g.concat(&parts)?;
        self.conv_bn_relu(g, cat, &self.spp.fuse, self.spp.fuse_bn, training)
    }

    /// `relu(bn(conv3x3(project(skip) + up)))`.
    pub(crate) fn blend(&self, g: &mut Graph, unit: &BlendUnit, skip: Var, up: Var, training: bool) -> Result<Var> {
        let (s, u) = (g.value(skip).shape(), g.value(up).shape());
        if (s[0], s[2], s[3]) != (u[0], u[2], u[3]) {
            return Err(Error::ShapeMismatch(format!("blending skip {s:?} with {u:?}")));
        }
        let projected = self.conv(g, skip, &unit.project)?;
        let sum = g.add(projected, up)?;
        self.conv_bn_relu(g, sum, &unit.conv, unit.bn, training)
    }

    /// Records the forward pass on `g`. `images` is `B x 3 x H x W`.
    pub fn forward_graph(&self, g: &mut Graph, images: Var, training: bool) -> Result<OutputVars> {
        self.check_input(g.value(images).shape())?;

        let x = self.conv_bn_relu(g, images, &self.stem.conv1, self.stem.bn1, training)?;
        let mut features = vec![self.conv_bn_relu(g, x, &self.stem.conv2, self.stem.bn2, training)?];
        for stage in &self.stages {
            let prev = *features.last().expect("stem output");
            let t = self.bn_relu_conv(g, prev, stage.transition_bn, &stage.transition, training)?;
            let mut block = vec![g.avg_pool(t, 2)?];
            for layer in &stage.layers {
                let input = if block.len() == 1 { block[0] } else { g.concat(&block)? };
                block.push(self.bn_relu_conv(g, input, layer.bn, &layer.conv, training)?);
            }
            features.push(if block.len() == 1 { block[0] } else { g.concat(&block)? });
        }

        let mut aux = BTreeMap::new();
        let mut decoded = self.spp(g, features[4], training)?;
        for (i, unit) in self.decoder.iter().enumerate() {
            let factor = AUX_FACTORS[i];
            let (_, head) = self.aux_heads[i];
            aux.insert(factor, self.conv(g, decoded, &head)?);
            let skip = features[3 - i];
            let [_, _, h, w] = g.value(skip).shape();
            let up = g.resize(decoded, h, w);
            decoded = self.blend(g, unit, skip, up, training)?;
        }
        let logits_q = self.conv(g, decoded, &self.head)?;
        Ok(OutputVars { logits_q, aux })
    }

    /// Runs a forward pass and returns the output tensors. Inference mode
    /// uses running batch-norm statistics and leaves the model untouched.
    pub fn forward(&self, images: &Tensor, training: bool) -> Result<ModelOutputs> {
        let mut g = Graph::new(&self.params);
        let input = g.input(images.clone());
        let vars = self.forward_graph(&mut g, input, training)?;
        Ok(ModelOutputs {
            logits_q: g.value(vars.logits_q).clone(),
            aux: vars.aux.iter().map(|(&f, &v)| (f, g.value(v).clone())).collect(),
        })
    }

    pub fn infer(&self, images: &Tensor) -> Result<ModelOutputs> {
        self.forward(images, false)
    }

    /// Per-pixel argmax of the logits upsampled to the input resolution.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<crate::grid::LabelMap>> {
        let [_, _, h, w] = images.shape();
        let out = self.infer(images)?;
        let full = upsample_logits(&out.logits_q, h, w);
        Ok(argmax_maps(&full))
    }
}

/// Bilinear upsampling of logits to `height x width`.
pub fn upsample_logits(logits: &Tensor, height: usize, width: usize) -> Tensor {
    ops::resize_bilinear(logits, height, width)
}

/// Argmax over the class axis; ties resolve to the lowest class id.
pub fn argmax_maps(logits: &Tensor) -> Vec<crate::grid::LabelMap> {
    let [n, c, h, w] = logits.shape();
    (0..n)
        .map(|i| {
            crate::grid::LabelMap::from_fn(h, w, |y, x| {
                let mut best = 0;
                let mut best_v = f64::NEG_INFINITY;
                for k in 0..c {
                    let v = logits.at([i, k, y, x]);
                    if v > best_v {
                        best_v = v;
                        best = k;
                    }
                }
                best as u8
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut state = seed;
        Tensor::from_fn([n, 3, h, w], |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as f64 / (1u64 << 31) as f64
        })
    }

    #[test]
    fn output_shapes() {
        let model = Model::new(ModelConfig::toy(5)).unwrap();
        let out = model.infer(&images(2, 128, 128, 1)).unwrap();
        assert_eq!(out.logits_q.shape(), [2, 5, 32, 32]);
        let expected = [(8, 16), (16, 8), (32, 4), (64, 2)];
        assert_eq!(out.aux.len(), 4);
        for (f, s) in expected {
            assert_eq!(out.aux[&f].shape(), [2, 5, s, s]);
        }
    }

    #[test]
    fn rejects_indivisible_input() {
        let model = Model::new(ModelConfig::toy(3)).unwrap();
        assert!(matches!(model.infer(&images(1, 96, 128, 1)), Err(Error::BadShape(_))));
    }

    #[test]
    fn zero_weights_give_uniform_logits() {
        let mut model = Model::new(ModelConfig::toy(4)).unwrap();
        for p in &mut model.params_mut().params {
            p.value.data_mut().fill(0.0);
        }
        let out = model.infer(&images(1, 64, 128, 2)).unwrap();
        let t = &out.logits_q;
        for y in 0..t.height() {
            for x in 0..t.width() {
                let v0 = t.at([0, 0, y, x]);
                for c in 1..4 {
                    assert_eq!(t.at([0, c, y, x]), v0);
                }
            }
        }
    }

    #[test]
    fn duplicated_items_are_bitwise_equal() {
        let model = Model::new(ModelConfig::toy(3)).unwrap();
        let one = images(1, 64, 64, 3);
        let two = Tensor::stack(&[one.clone(), one.clone()]).unwrap();
        let a = model.infer(&one).unwrap();
        let b = model.infer(&two).unwrap();
        assert_eq!(a.logits_q.item(0), b.logits_q.item(0));
        assert_eq!(b.logits_q.item(0), b.logits_q.item(1));
        for f in AUX_FACTORS {
            assert_eq!(b.aux[&f].item(0), b.aux[&f].item(1));
        }
    }

    #[test]
    fn grid_too_large() {
        let mut cfg = ModelConfig::toy(3);
        cfg.spp_grid = vec![1, 2, 3, 6];
        let model = Model::new(cfg.clone()).unwrap();
        // 256 px -> 4x4 at 1/64
        assert!(matches!(
            model.infer(&images(1, 256, 256, 1)),
            Err(Error::GridTooLarge { grid: 6, height: 4, width: 4 })
        ));
        // 384 px -> 6x6 at 1/64
        assert!(model.infer(&images(1, 384, 384, 1)).is_ok());
    }

    #[test]
    fn spp_constant_input_grid1() {
        let model = Model::new(ModelConfig::toy(3)).unwrap();
        let mut g = Graph::new(model.params());
        let x = g.input(Tensor::full([1, 64, 3, 5], 0.7));
        let y = model.spp(&mut g, x, false).unwrap();
        let t = g.value(y);
        for c in 0..t.channels() {
            let plane = t.plane(0, c);
            assert!(plane.iter().all(|&v| (v - plane[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn spp_channel_permutation_equivariance() {
        let mut cfg = ModelConfig::toy(3);
        cfg.spp_grid = vec![1, 2, 3, 6];
        let model = Model::new(cfg).unwrap();
        let top = model.config.encoder_stage_widths[4];
        let x = Tensor::from_fn([1, top, 6, 6], |[_, c, y, x]| ((c * 7 + y * 3 + x) % 11) as f64 * 0.1 - 0.4);
        let perm: Vec<usize> = (0..top).map(|c| (c * 5 + 3) % top).collect();
        let xp = Tensor::from_fn(x.shape(), |[n, c, y, xx]| x.at([n, perm[c], y, xx]));

        let mut permuted = model.clone();
        let reorder = |t: &Tensor| Tensor::from_fn(t.shape(), |[o, i, a, b]| t.at([o, perm[i], a, b]));
        for (_, conv) in &model.spp.branches {
            permuted.params.params[conv.w].value = reorder(&model.params.params[conv.w].value);
        }
        // the first `top` input channels of the fuse convolution see the raw features
        let fuse = &model.params.params[model.spp.fuse.w].value;
        permuted.params.params[model.spp.fuse.w].value = Tensor::from_fn(fuse.shape(), |[o, i, a, b]| {
            if i < top { fuse.at([o, perm[i], a, b]) } else { fuse.at([o, i, a, b]) }
        });

        let run = |m: &Model, input: &Tensor| {
            let mut g = Graph::new(m.params());
            let v = g.input(input.clone());
            let y = m.spp(&mut g, v, false).unwrap();
            g.value(y).clone()
        };
        let a = run(&model, &x);
        let b = run(&permuted, &xp);
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    fn blend_case(skip: Tensor, up: Tensor, identity_projection: bool) -> (Tensor, Tensor) {
        let mut model = Model::new(ModelConfig::toy(3)).unwrap();
        let unit = model.decoder[0].clone();
        if identity_projection {
            let p = &mut model.params.params[unit.project.w].value;
            let [o, i, _, _] = p.shape();
            *p = Tensor::from_fn([o, i, 1, 1], |[a, b, _, _]| if a == b { 1.0 } else { 0.0 });
        }
        let mut g = Graph::new(model.params());
        let s = g.input(skip);
        let u = g.input(up);
        let out = model.blend(&mut g, &unit, s, u, false).unwrap();
        let projected = model.conv(&mut g, s, &unit.project).unwrap();
        let sum = g.add(projected, u).unwrap();
        let reference = model.conv_bn_relu(&mut g, sum, &unit.conv, unit.bn, false).unwrap();
        (g.value(out).clone(), g.value(reference).clone())
    }

    #[test]
    fn blend_zero_skip_is_conv_of_up() {
        let d = ModelConfig::toy(3).decoder_width;
        let skip_c = ModelConfig::toy(3).encoder_stage_widths[3];
        let up = Tensor::from_fn([1, d, 4, 4], |[_, c, y, x]| ((c + y * 2 + x) % 5) as f64 - 2.0);
        let (out, _) = blend_case(Tensor::zeros([1, skip_c, 4, 4]), up.clone(), false);
        let model = Model::new(ModelConfig::toy(3)).unwrap();
        let unit = model.decoder[0].clone();
        let mut g = Graph::new(model.params());
        let u = g.input(up);
        let conv_only = model.conv_bn_relu(&mut g, u, &unit.conv, unit.bn, false).unwrap();
        assert_eq!(&out, g.value(conv_only));
    }

    #[test]
    fn blend_zero_up_identity_projection() {
        let cfg = ModelConfig::toy(3);
        let skip = Tensor::from_fn([1, cfg.encoder_stage_widths[3], 4, 4], |[_, c, y, x]| {
            ((c * 3 + y + x) % 7) as f64 * 0.2
        });
        let (out, reference) = blend_case(skip, Tensor::zeros([1, cfg.decoder_width, 4, 4]), true);
        assert_eq!(out, reference);
    }

    #[test]
    fn blend_shape_mismatch() {
        let model = Model::new(ModelConfig::toy(3)).unwrap();
        let unit = model.decoder[0].clone();
        let mut g = Graph::new(model.params());
        let s = g.input(Tensor::zeros([1, 48, 4, 4]));
        let u = g.input(Tensor::zeros([1, 32, 2, 2]));
        assert!(matches!(model.blend(&mut g, &unit, s, u, false), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn blend_sum_commutes() {
        // With identical (identity) projections on both operands the pre-conv
        // sums agree when the operand roles are swapped.
        let a = Tensor::from_fn([1, 4, 2, 2], |[_, c, y, x]| (c + 2 * y + x) as f64 * 0.25);
        let b = Tensor::from_fn([1, 4, 2, 2], |[_, c, y, x]| (3 * c + y) as f64 - 0.5 * x as f64);
        let mut ab = a.clone();
        ab.add_assign(&b);
        let mut ba = b.clone();
        ba.add_assign(&a);
        assert_eq!(ab, ba);
    }

    #[test]
    fn upsample_constant_and_stencil() {
        let c = Tensor::full([1, 2, 3, 3], 1.5);
        let up = upsample_logits(&c, 12, 12);
        assert!(up.data().iter().all(|&v| v == 1.5));

        // one hot pixel at the center of a 3x3 map; 1-D taps at 4x are
        // [0, 0, .125, .375, .625, .875, .875, .625, .375, .125, 0, 0]
        // for the center index, so the 2-D footprint is their outer product.
        let mut hot = Tensor::zeros([1, 1, 3, 3]);
        hot.set([0, 0, 1, 1], 1.0);
        let up = upsample_logits(&hot, 12, 12);
        let taps = [0.0, 0.0, 0.125, 0.375, 0.625, 0.875, 0.875, 0.625, 0.375, 0.125, 0.0, 0.0];
        for y in 0..12 {
            for x in 0..12 {
                assert_eq!(up.at([0, 0, y, x]), taps[y] * taps[x], "at {y},{x}");
            }
        }
    }

    #[test]
    fn upsample_stays_in_cell_hull() {
        let t = Tensor::from_fn([1, 1, 4, 4], |[_, _, y, x]| (y * 4 + x) as f64);
        let up = upsample_logits(&t, 16, 16);
        let (lo, hi) = (0.0, 15.0);
        assert!(up.data().iter().all(|&v| v >= lo && v <= hi));
        // monotone input stays monotone along rows and columns
        for y in 0..16 {
            for x in 1..16 {
                assert!(up.at([0, 0, y, x]) >= up.at([0, 0, y, x - 1]));
                assert!(up.at([0, 0, x, y]) >= up.at([0, 0, x - 1, y]));
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::toy(3);
        cfg.encoder_stage_widths = vec![8, 16];
        assert!(matches!(Model::new(cfg), Err(Error::Config { .. })));
        let mut cfg = ModelConfig::toy(3);
        cfg.encoder_stage_widths[2] = 16;
        assert!(Model::new(cfg).is_err());
    }

    #[test]
    fn parameter_names_are_unique() {
        let model = Model::new(ModelConfig::default()).unwrap();
        let mut names: Vec<&str> = model.params().params.iter().map(|p| p.name.as_str()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }
}
