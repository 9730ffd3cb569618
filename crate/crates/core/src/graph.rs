//! Reverse-mode tape over the kernels in [`crate::ops`].
//!
//! A [`Graph`] records one forward pass. Parameters are read from a borrowed
//! [`ParamSet`]; batch-norm layers in training mode record their batch
//! statistics so the caller can fold them into the running averages.

use crate::error::{Error, Result};
use crate::ops::{self, BnBatchStats, ConvGeometry};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Initialized from externally trained weights (gets the reduced learning rate).
    pub pretrained: bool,
}

/// Named non-trainable state (batch-norm running statistics).
#[derive(Clone, Debug)]
pub struct Buffer {
    pub name: String,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    pub params: Vec<Param>,
    pub buffers: Vec<Buffer>,
}

impl ParamSet {
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.params.push(Param {
            name: name.into(),
            value,
            pretrained: false,
        });
        self.params.len() - 1
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Vec<f64>) -> usize {
        self.buffers.push(Buffer {
            name: name.into(),
            value,
        });
        self.buffers.len() - 1
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Batch-norm layer: learnable affine parameters plus running-stat buffers.
#[derive(Clone, Copy, Debug)]
pub struct BnLayer {
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geometry: ConvGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        var: Vec<f64>,
        batch_stats: bool,
    },
    Relu(Var),
    Add(Var, Var),
    Concat(Vec<Var>),
    AvgPool {
        x: Var,
        k: usize,
    },
    AdaptivePool {
        x: Var,
        grid: usize,
    },
    Resize(Var),
}

struct Node {
    op: Op,
    value: Option<Tensor>,
}

/// Batch statistics observed by one training-mode batch-norm call.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub layer: BnLayer,
    pub stats: BnBatchStats,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    bn_updates: Vec<BnUpdate>,
}

/// Parameter gradients, indexed like `ParamSet::params`.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, index: usize) -> Option<&Tensor> {
        self.params.get(index).and_then(Option::as_ref)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            bn_updates: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    fn push(&mut self, op: Op, value: Option<Tensor>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0] {
            Node { op: Op::Param(i), .. } => &self.params.params[*i].value,
            Node { value: Some(t), .. } => t,
            Node { value: None, .. } => unreachable!("every non-parameter node stores its value"),
        }
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Input, Some(value))
    }

    pub fn param(&mut self, index: usize) -> Var {
        self.push(Op::Param(index), None)
    }

    pub fn conv(&mut self, x: Var, w: usize, b: Option<usize>, geometry: ConvGeometry) -> Result<Var> {
        let wv = self.param(w);
        let bv = b.map(|b| self.param(b));
        let y = ops::conv2d(
            self.value(x),
            self.value(wv),
            bv.map(|b| self.value(b)),
            geometry,
        )?;
        Ok(self.push(
            Op::Conv {
                x,
                w: wv,
                b: bv,
                geometry,
            },
            Some(y),
        ))
    }

    /// Training mode normalizes with batch statistics and records them;
    /// inference mode uses the running statistics.
    pub fn batch_norm(&mut self, x: Var, layer: BnLayer, training: bool) -> Result<Var> {
        let gamma = self.param(layer.gamma);
        let beta = self.param(layer.beta);
        let c = self.value(x).channels();
        if self.value(gamma).len() != c {
            return Err(Error::ShapeMismatch(format!(
                "batch norm over {c} channels with {} parameters",
                self.value(gamma).len()
            )));
        }
        let (mean, var) = if training {
            let stats = ops::channel_stats(self.value(x));
            let mv = (stats.mean.clone(), stats.var.clone());
            self.bn_updates.push(BnUpdate { layer, stats });
            mv
        } else {
            (
                self.params.buffers[layer.running_mean].value.clone(),
                self.params.buffers[layer.running_var].value.clone(),
            )
        };
        let y = ops::batch_norm(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            &mean,
            &var,
        );
        Ok(self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                var,
                batch_stats: training,
            },
            Some(y),
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(Op::Relu(x), Some(y))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch(format!(
                "adding {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut y = ta.clone();
        y.add_assign(tb);
        Ok(self.push(Op::Add(a, b), Some(y)))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ops::concat_channels(&tensors)?;
        Ok(self.push(Op::Concat(parts.to_vec()), Some(y)))
    }

    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let y = ops::avg_pool(self.value(x), k)?;
        Ok(self.push(Op::AvgPool { x, k }, Some(y)))
    }

    pub fn adaptive_pool(&mut self, x: Var, grid: usize) -> Result<Var> {
        let y = ops::adaptive_avg_pool(self.value(x), grid)?;
        Ok(self.push(Op::AdaptivePool { x, grid }, Some(y)))
    }

    pub fn resize(&mut self, x: Var, height: usize, width: usize) -> Var {
        let y = ops::resize_bilinear(self.value(x), height, width);
        self.push(Op::Resize(x), Some(y))
    }

    /// Back-propagates `seeds` (gradients of a scalar objective with respect
    /// to some nodes) through the tape.
    pub fn backward(&self, seeds: Vec<(Var, Tensor)>) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            if g.shape() != self.value(v).shape() {
                return Err(Error::ShapeMismatch(format!(
                    "seed gradient {:?} for node of shape {:?}",
                    g.shape(),
                    self.value(v).shape()
                )));
            }
            accumulate(&mut grads[v.0], g);
        }
        let mut param_grads: Vec<Option<Tensor>> = (0..self.params.params.len()).map(|_| None).collect();

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(i) => accumulate(&mut param_grads[*i], g),
                Op::Conv { x, w, b, geometry } => {
                    let cg = ops::conv2d_backward(self.value(*x), self.value(*w), b.is_some(), *geometry, &g);
                    accumulate(&mut grads[x.0], cg.input);
                    accumulate(&mut grads[w.0], cg.weight);
                    if let (Some(b), Some(db)) = (b, cg.bias) {
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    var,
                    batch_stats,
                } => {
                    let bg = ops::batch_norm_backward(
                        self.value(*x),
                        self.value(*gamma).data(),
                        mean,
                        var,
                        *batch_stats,
                        &g,
                    );
                    let c = bg.gamma.len();
                    accumulate(&mut grads[x.0], bg.input);
                    accumulate(&mut grads[gamma.0], Tensor::new([c, 1, 1, 1], bg.gamma)?);
                    accumulate(&mut grads[beta.0], Tensor::new([c, 1, 1, 1], bg.beta)?);
                }
                Op::Relu(x) => {
                    let dx = ops::relu_backward(self.value(*x), &g);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::Concat(parts) => {
                    let channels: Vec<usize> = parts.iter().map(|p| self.value(*p).channels()).collect();
                    for (p, dp) in parts.iter().zip(ops::split_channels(&g, &channels)) {
                        accumulate(&mut grads[p.0], dp);
                    }
                }
                Op::AvgPool { x, k } => {
                    let dx = ops::avg_pool_backward(self.value(*x).shape(), *k, &g);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::AdaptivePool { x, grid } => {
                    let dx = ops::adaptive_avg_pool_backward(self.value(*x).shape(), *grid, &g);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Resize(x) => {
                    let dx = ops::resize_bilinear_backward(self.value(*x).shape(), &g);
                    accumulate(&mut grads[x.0], dx);
                }
            }
        }
        Ok(Gradients { params: param_grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => {
            if existing.shape() == g.shape() {
                existing.add_assign(&g);
            } else {
                // parameter shapes ([C,1,1,1]) and per-node shapes can differ only in layout
                for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
        None => *slot = Some(g),
    }
}
