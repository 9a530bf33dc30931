//! Reverse-mode differentiation over a linear tape.
//!
//! Operations are evaluated eagerly and appended to a [`Tape`]. Calling
//! [`Tape::backward`] walks the tape once in reverse recording order and
//! accumulates gradients into the parameter slots of a [`ParamStore`].
//! Gradients add onto whatever is already stored; callers zero them between
//! optimizer steps.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::ops::{
    self, batch_norm_backward, batch_norm_forward, concat_backward, conv2d_backward,
    max_pool_backward, max_pool_forward, relu_backward, resize_bilinear_backward,
    sigmoid_bce_backward, BatchNormConfig, BatchNormSaved, BatchStats, ConvSpec,
};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// State that is saved with the model but never receives gradients
    /// (batch-norm running statistics).
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// Named parameter and buffer storage, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, kind, tensor });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.iter().filter(|(_, p)| p.kind == ParamKind::Trainable)
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.trainable().map(|(_, p)| p.tensor.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    /// Bitwise equality of names, kinds, shapes and values.
    pub fn bits_eq(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name && a.kind == b.kind && a.tensor.bits_eq(&b.tensor)
            })
    }

    /// Applies the running-statistic updates collected by a training-mode
    /// forward pass.
    pub fn apply_running_updates(&mut self, updates: Vec<RunningUpdate>) {
        for u in updates {
            ops::update_running(
                self.params[u.mean.0].tensor.data_mut(),
                &u.stats.mean,
                u.momentum,
            );
            ops::update_running(
                self.params[u.var.0].tensor.data_mut(),
                &u.stats.var,
                u.momentum,
            );
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Parameter ids of one batch-norm layer.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// Pending running-statistics update from a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct RunningUpdate {
    mean: ParamId,
    var: ParamId,
    stats: BatchStats,
    momentum: f32,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        saved: BatchNormSaved,
    },
    Relu(Var),
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    Resize(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    Bce {
        logits: Var,
        targets: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TapeState {
    Recording,
    Consumed,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    running_updates: Vec<RunningUpdate>,
    leaf_grads: HashMap<usize, Vec<f32>>,
    state: TapeState,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            running_updates: Vec::new(),
            leaf_grads: HashMap::new(),
            state: TapeState::Recording,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Input whose gradient is kept and can be read with [`Tape::grad`]
    /// after [`Tape::backward`].
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let mut value = p.tensor.clone();
        value.clear_grad();
        self.push(value, Op::Param(id), p.kind == ParamKind::Trainable)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = ops::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b).data()),
            &spec,
        )?;
        let needs = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            out,
            Op::Conv {
                input,
                weight,
                bias,
                spec,
            },
            needs,
        ))
    }

    pub fn batch_norm(
        &mut self,
        input: Var,
        params: &BatchNormParams,
        store: &ParamStore,
        training: bool,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        let gamma = self.param(store, params.gamma);
        let beta = self.param(store, params.beta);
        let (out, saved, stats) = batch_norm_forward(
            self.value(input),
            self.value(gamma).data(),
            self.value(beta).data(),
            store.tensor(params.running_mean).data(),
            store.tensor(params.running_var).data(),
            training,
            cfg,
        )?;
        if let Some(stats) = stats {
            self.running_updates.push(RunningUpdate {
                mean: params.running_mean,
                var: params.running_var,
                stats,
                momentum: cfg.momentum,
            });
        }
        let needs = self.needs(input) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let needs = self.needs(input);
        self.push(out, Op::Relu(input), needs)
    }

    pub fn max_pool2d(&mut self, input: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let (out, argmax) = max_pool_forward(self.value(input), kernel, stride, padding)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::MaxPool { input, argmax }, needs))
    }

    pub fn resize_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = ops::resize_bilinear(self.value(input), out_h, out_w)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Resize(input), needs))
    }

    pub fn upsample(&mut self, input: Var, scale: usize) -> Result<Var> {
        let s = self.value(input).shape();
        if scale == 0 {
            return Err(Error::InvalidArgument("upsample scale must be positive".into()));
        }
        self.resize_bilinear(input, s.h * scale, s.w * scale)
    }

    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat_channels(&tensors)?;
        let needs = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(out, Op::Concat(inputs.to_vec()), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    /// Scalar mean BCE loss between `sigmoid(logits)` and `{0, 1}` targets.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: Tensor) -> Result<Var> {
        let loss = ops::sigmoid_bce_loss(self.value(logits), &targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("sigmoid_bce_loss".into()));
        }
        let needs = self.needs(logits);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { logits, targets }, needs))
    }

    /// Batch-norm running-statistic updates recorded so far.
    pub fn take_running_updates(&mut self) -> Vec<RunningUpdate> {
        std::mem::take(&mut self.running_updates)
    }

    /// Gradient of an input created with [`Tape::input_with_grad`].
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.leaf_grads.get(&v.0).map(|g| g.as_slice())
    }

    /// Differentiates the scalar `loss` and accumulates parameter gradients
    /// into `store`. Recorded intermediates are released afterwards, so a
    /// tape can be differentiated only once.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.check_backward(loss)?;
        if self.value(loss).numel() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {}",
                self.value(loss).shape()
            )));
        }
        self.backward_with_grad(loss, &[1.0], store)
    }

    fn check_backward(&self, v: Var) -> Result<()> {
        if self.state == TapeState::Consumed {
            return Err(Error::Tape(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        if self.nodes.is_empty() || v.0 >= self.nodes.len() {
            return Err(Error::Tape("backward without a recorded forward pass".into()));
        }
        Ok(())
    }

    /// Backpropagates an arbitrary upstream gradient `seed` from `output`.
    pub fn backward_with_grad(&mut self, output: Var, seed: &[f32], store: &mut ParamStore) -> Result<()> {
        self.check_backward(output)?;
        if seed.len() != self.value(output).numel() {
            return Err(Error::shape(
                "backward",
                format!(
                    "seed has {} values for output {}",
                    seed.len(),
                    self.value(output).shape()
                ),
            ));
        }
        self.state = TapeState::Consumed;
        let mut grads: Vec<Option<Vec<f32>>> = Vec::new();
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(seed.to_vec());

        let nodes = std::mem::take(&mut self.nodes);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of tape node {i} (element {bad})"
                )));
            }
            let mut send = |v: Var, delta: Vec<f32>| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Input => {
                    self.leaf_grads.insert(i, g);
                }
                Op::Param(id) => store.get_mut(*id).tensor.accumulate_grad(&g),
                Op::Conv {
                    input,
                    weight,
                    bias,
                    spec,
                } => {
                    let want_input = nodes[input.0].needs_grad;
                    let cg = conv2d_backward(
                        &nodes[input.0].value,
                        &nodes[weight.0].value,
                        spec,
                        &g,
                        want_input,
                    )?;
                    if let Some(gi) = cg.input {
                        send(*input, gi);
                    }
                    send(*weight, cg.weight);
                    if let Some(b) = bias {
                        send(*b, cg.bias);
                    }
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    saved,
                } => {
                    let (gi, gg, gb) = batch_norm_backward(
                        nodes[input.0].value.shape(),
                        nodes[gamma.0].value.data(),
                        saved,
                        &g,
                    );
                    send(*input, gi);
                    send(*gamma, gg);
                    send(*beta, gb);
                }
                Op::Relu(input) => {
                    let gi = relu_backward(&nodes[input.0].value, &g);
                    send(*input, gi);
                }
                Op::MaxPool { input, argmax } => {
                    let gi = max_pool_backward(
                        nodes[input.0].value.shape(),
                        node.value.shape(),
                        argmax,
                        &g,
                    );
                    send(*input, gi);
                }
                Op::Resize(input) => {
                    let gi = resize_bilinear_backward(nodes[input.0].value.shape(), node.value.shape(), &g);
                    send(*input, gi);
                }
                Op::Concat(inputs) => {
                    let shapes: Vec<Shape> = inputs.iter().map(|v| nodes[v.0].value.shape()).collect();
                    for (v, part) in inputs.iter().zip(concat_backward(&shapes, &g)) {
                        send(*v, part);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Bce { logits, targets } => {
                    let gi = sigmoid_bce_backward(&nodes[logits.0].value, targets, g[0]);
                    send(*logits, gi);
                }
            }
        }
        Ok(())
    }
}
