//! Layer graphs: a topologically ordered DAG of layer nodes with named
//! parameters, forward passes that retain activations, and reverse-mode
//! gradients.

use std::borrow::Cow;
use std::collections::HashSet;

use crate::ops::activation::{activation, activation_backward, ActivationMode};
use crate::ops::conv::{conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward};
use crate::ops::dense::{dense, dense_backward};
use crate::ops::merge::{merge, merge_backward, MergeMode};
use crate::ops::norm::{batch_norm, batch_norm_backward, update_running_stats, BnCache, BnParams, NormMode};
use crate::ops::pool::{global_avg_pool, global_avg_pool_backward, pool2d_backward, pool2d_padded, PoolMode};
use crate::tensor::{dim_err, param_err, Real, Result, StoredTensor, Tensor, TensorError};

/// Where a node reads one of its inputs from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeRef {
    Input,
    Node(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl Slot {
    pub const ALL: [Slot; 6] = [
        Slot::Weight,
        Slot::Bias,
        Slot::Gamma,
        Slot::Beta,
        Slot::RunningMean,
        Slot::RunningVar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Weight => "w",
            Slot::Bias => "b",
            Slot::Gamma => "gamma",
            Slot::Beta => "beta",
            Slot::RunningMean => "mean",
            Slot::RunningVar => "var",
        }
    }

    pub fn from_name(name: &str) -> Option<Slot> {
        Slot::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Running statistics are buffers, not trainable parameters.
    pub fn trainable(self) -> bool {
        !matches!(self, Slot::RunningMean | Slot::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv2d {
        stride: usize,
        padding: usize,
    },
    DepthwiseConv2d {
        stride: usize,
        padding: usize,
    },
    Pool2d {
        mode: PoolMode,
        window: usize,
        stride: usize,
        padding: usize,
    },
    GlobalAvgPool,
    Dense,
    BatchNorm {
        epsilon: f32,
        momentum: f32,
    },
    Activation(ActivationMode),
    Merge(MergeMode),
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::DepthwiseConv2d { .. } => "depthwise_conv2d",
            LayerKind::Pool2d { .. } => "pool2d",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Dense => "dense",
            LayerKind::BatchNorm { .. } => "batch_norm",
            LayerKind::Activation(_) => "activation",
            LayerKind::Merge(_) => "merge",
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::DepthwiseConv2d { .. })
    }

    /// Slots that must be present; `Bias` is optional for convolutions.
    fn required_slots(&self) -> &'static [Slot] {
        match self {
            LayerKind::Conv2d { .. } | LayerKind::DepthwiseConv2d { .. } => &[Slot::Weight],
            LayerKind::Dense => &[Slot::Weight, Slot::Bias],
            LayerKind::BatchNorm { .. } => &[Slot::Gamma, Slot::Beta, Slot::RunningMean, Slot::RunningVar],
            _ => &[],
        }
    }

    fn allowed_slot(&self, slot: Slot) -> bool {
        self.required_slots().contains(&slot) || (self.is_conv() && slot == Slot::Bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<NodeRef>,
    pub params: Vec<(Slot, StoredTensor)>,
}

impl LayerNode {
    pub fn param(&self, slot: Slot) -> Option<&StoredTensor> {
        self.params.iter().find(|(s, _)| *s == slot).map(|(_, t)| t)
    }

    fn slot_index(&self, slot: Slot) -> Option<usize> {
        self.params.iter().position(|(s, _)| *s == slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm uses batch statistics.
    Train,
    Infer,
}

impl From<Mode> for NormMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Train => NormMode::Train,
            Mode::Infer => NormMode::Infer,
        }
    }
}

/// Parameter views in the kernel element type, aligned with each node's `params`.
pub struct ParamSet<'a, T: Real> {
    per_node: Vec<Vec<Cow<'a, Tensor<T>>>>,
}

impl<'a, T: Real> ParamSet<'a, T> {
    pub fn get(&self, node: usize, idx: usize) -> &Tensor<T> {
        &self.per_node[node][idx]
    }

    pub fn get_mut(&mut self, node: usize, idx: usize) -> &mut Tensor<T> {
        self.per_node[node][idx].to_mut()
    }
}

#[derive(Debug, Clone)]
enum NodeCache<T> {
    None,
    Bn(BnCache<T>),
    Argmax(Vec<usize>),
}

/// Activations of one forward pass, owned by the caller.
#[derive(Debug, Clone)]
pub struct Trace<T = f32> {
    input: Tensor<T>,
    outputs: Vec<Tensor<T>>,
    caches: Vec<NodeCache<T>>,
    mode: Mode,
}

impl<T: Real> Trace<T> {
    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }

    pub fn output_of(&self, node: usize) -> &Tensor<T> {
        &self.outputs[node]
    }

    pub fn outputs(&self) -> &[Tensor<T>] {
        &self.outputs
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// Gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    /// Aligned with each node's `params`; `None` for running statistics.
    pub params: Vec<Vec<Option<Tensor<T>>>>,
    pub input: Tensor<T>,
    /// Gradient with respect to each node's output, where one flowed.
    pub activations: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, graph: &LayerGraph, node: usize, slot: Slot) -> Option<&Tensor<T>> {
        let idx = graph.nodes[node].slot_index(slot)?;
        self.params[node][idx].as_ref()
    }

    /// `(node.slot, gradient)` for every trainable parameter.
    pub fn named<'a>(&'a self, graph: &'a LayerGraph) -> Vec<(String, &'a Tensor<T>)> {
        let mut out = Vec::new();
        for (node, grads) in graph.nodes.iter().zip(&self.params) {
            for ((slot, _), g) in node.params.iter().zip(grads) {
                if let Some(g) = g {
                    out.push((format!("{}.{}", node.name, slot.name()), g));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGraph {
    nodes: Vec<LayerNode>,
    output: usize,
    input_channels: usize,
}

impl LayerGraph {
    /// Validates topology and parameter shapes. Nodes must be listed in
    /// topological order: each input refers to the graph input or an earlier node.
    pub fn new(nodes: Vec<LayerNode>, output: usize, input_channels: usize) -> Result<Self> {
        if output >= nodes.len() {
            return Err(param_err("graph", format!("output index {output} out of range")));
        }
        let mut names = HashSet::new();
        for (i, node) in nodes.iter().enumerate() {
            if node.name.is_empty() || !names.insert(node.name.as_str()) {
                return Err(param_err("graph", format!("node name {:?} is empty or repeated", node.name)));
            }
            let arity_ok = match node.kind {
                LayerKind::Merge(_) => !node.inputs.is_empty(),
                _ => node.inputs.len() == 1,
            };
            if !arity_ok {
                return Err(param_err("graph", format!("node {} has {} inputs", node.name, node.inputs.len())));
            }
            for r in &node.inputs {
                if let NodeRef::Node(j) = r {
                    if *j >= i {
                        return Err(param_err(
                            "graph",
                            format!("node {} reads node {j}, which is not earlier in topological order", node.name),
                        ));
                    }
                }
            }
            for slot in node.kind.required_slots() {
                if node.param(*slot).is_none() {
                    return Err(param_err("graph", format!("node {} lacks parameter {}", node.name, slot.name())));
                }
            }
            let mut seen = HashSet::new();
            for (slot, _) in &node.params {
                if !node.kind.allowed_slot(*slot) || !seen.insert(*slot) {
                    return Err(param_err(
                        "graph",
                        format!("node {} has unexpected parameter {}", node.name, slot.name()),
                    ));
                }
            }
            check_param_shapes(node)?;
        }
        Ok(Self {
            nodes,
            output,
            input_channels,
        })
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &LayerNode {
        &self.nodes[idx]
    }

    pub fn output(&self) -> usize {
        self.output
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// The node feeding the final sigmoid, if the graph ends in one.
    pub fn logit_node(&self) -> Option<usize> {
        let out = &self.nodes[self.output];
        match (&out.kind, out.inputs.as_slice()) {
            (LayerKind::Activation(ActivationMode::Sigmoid), [NodeRef::Node(j)]) => Some(*j),
            _ => None,
        }
    }

    pub fn last_conv_layer(&self) -> Option<usize> {
        self.nodes.iter().rposition(|n| n.kind.is_conv())
    }

    pub fn is_quantized(&self) -> bool {
        self.nodes
            .iter()
            .flat_map(|n| &n.params)
            .any(|(_, t)| matches!(t, StoredTensor::I8(_)))
    }

    /// Sum of element counts over trainable parameters.
    pub fn count_params(&self) -> usize {
        self.nodes
            .iter()
            .flat_map(|n| &n.params)
            .filter(|(s, _)| s.trainable())
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn param_mut(&mut self, node: usize, slot: Slot) -> Option<&mut Tensor<f32>> {
        let n = &mut self.nodes[node];
        let idx = n.slot_index(slot)?;
        n.params[idx].1.as_f32_mut()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (usize, Slot, &mut StoredTensor)> {
        self.nodes
            .iter_mut()
            .enumerate()
            .flat_map(|(i, n)| n.params.iter_mut().map(move |(s, t)| (i, *s, t)))
    }

    pub(crate) fn into_parts(self) -> (Vec<LayerNode>, usize, usize) {
        (self.nodes, self.output, self.input_channels)
    }

    pub fn param_set<T: Real>(&self) -> ParamSet<'_, T> {
        ParamSet {
            per_node: self
                .nodes
                .iter()
                .map(|n| n.params.iter().map(|(_, t)| t.view::<T>()).collect())
                .collect(),
        }
    }

    /// Inference forward pass returning the designated output.
    pub fn forward(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut trace = self.forward_traced(input, Mode::Infer)?;
        Ok(trace.outputs.swap_remove(self.output))
    }

    pub fn forward_traced<T: Real>(&self, input: &Tensor<T>, mode: Mode) -> Result<Trace<T>> {
        self.forward_with(&self.param_set(), input, mode)
    }

    pub fn forward_with<T: Real>(&self, params: &ParamSet<'_, T>, input: &Tensor<T>, mode: Mode) -> Result<Trace<T>> {
        let [_, c, _, _] = input.dims4("forward")?;
        if c != self.input_channels {
            return Err(dim_err(
                "forward",
                "channels",
                format!("graph expects {} input channels, got {c}", self.input_channels),
            ));
        }
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        let mut caches = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let ins: Vec<&Tensor<T>> = node
                .inputs
                .iter()
                .map(|r| match r {
                    NodeRef::Input => input,
                    NodeRef::Node(j) => &outputs[*j],
                })
                .collect();
            let p = |slot: Slot| node.slot_index(slot).map(|k| params.get(i, k));
            let (out, cache) = forward_node(node, &ins, &p, mode).map_err(|e| with_node(e, &node.name))?;
            outputs.push(out);
            caches.push(cache);
        }
        Ok(Trace {
            input: input.clone(),
            outputs,
            caches,
            mode,
        })
    }

    /// Reverse pass seeded with gradients at one or more node outputs.
    pub fn backward<T: Real>(&self, trace: &Trace<T>, seeds: &[(usize, &Tensor<T>)]) -> Result<Gradients<T>> {
        self.backward_with(&self.param_set(), trace, seeds)
    }

    pub fn backward_with<T: Real>(
        &self,
        params: &ParamSet<'_, T>,
        trace: &Trace<T>,
        seeds: &[(usize, &Tensor<T>)],
    ) -> Result<Gradients<T>> {
        if trace.outputs.len() != self.nodes.len() {
            return Err(TensorError::State("trace does not belong to this graph".into()));
        }
        let mut pending: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for (node, g) in seeds {
            if g.shape() != trace.outputs[*node].shape() {
                return Err(dim_err(
                    "backward",
                    "seed",
                    format!("seed for node {node} has shape {:?}, output is {:?}", g.shape(), trace.outputs[*node].shape()),
                ));
            }
            accumulate(&mut pending[*node], (*g).clone());
            last = last.max(*node);
        }
        let mut param_grads: Vec<Vec<Option<Tensor<T>>>> =
            self.nodes.iter().map(|n| vec![None; n.params.len()]).collect();
        let mut activations = vec![None; self.nodes.len()];
        let mut input_grad: Option<Tensor<T>> = None;
        for i in (0..=last).rev() {
            let Some(dy) = pending[i].take() else { continue };
            let node = &self.nodes[i];
            let ins: Vec<&Tensor<T>> = node
                .inputs
                .iter()
                .map(|r| match r {
                    NodeRef::Input => &trace.input,
                    NodeRef::Node(j) => &trace.outputs[*j],
                })
                .collect();
            let p = |slot: Slot| node.slot_index(slot).map(|k| params.get(i, k));
            let (in_grads, slot_grads) =
                backward_node(node, &ins, &trace.outputs[i], &trace.caches[i], &dy, &p).map_err(|e| with_node(e, &node.name))?;
            for (slot, g) in slot_grads {
                if let Some(k) = node.slot_index(slot) {
                    param_grads[i][k] = Some(g);
                }
            }
            for (r, g) in node.inputs.iter().zip(in_grads) {
                match r {
                    NodeRef::Input => accumulate(&mut input_grad, g),
                    NodeRef::Node(j) => accumulate(&mut pending[*j], g),
                }
            }
            activations[i] = Some(dy);
        }
        Ok(Gradients {
            params: param_grads,
            input: input_grad.unwrap_or_else(|| Tensor::zeros(trace.input.shape().to_vec())),
            activations,
        })
    }

    /// Folds the batch statistics of a training-mode trace into running stats.
    pub fn apply_batch_stats(&mut self, trace: &Trace<f32>) {
        for (node, cache) in self.nodes.iter_mut().zip(&trace.caches) {
            let (LayerKind::BatchNorm { momentum, .. }, NodeCache::Bn(c)) = (&node.kind, cache) else {
                continue;
            };
            if c.mode != NormMode::Train {
                continue;
            }
            let momentum = *momentum;
            let (mi, vi) = (node.slot_index(Slot::RunningMean), node.slot_index(Slot::RunningVar));
            let (Some(mi), Some(vi)) = (mi, vi) else { continue };
            let mut mean = node.params[mi].1.as_f32().cloned();
            let mut var = node.params[vi].1.as_f32().cloned();
            if let (Some(m), Some(v)) = (mean.as_mut(), var.as_mut()) {
                update_running_stats(m.data_mut(), v.data_mut(), c, momentum);
                node.params[mi].1 = StoredTensor::F32(mean.unwrap());
                node.params[vi].1 = StoredTensor::F32(var.unwrap());
            }
        }
    }
}

fn with_node(e: TensorError, name: &str) -> TensorError {
    match e {
        TensorError::Dimension { op, axis, detail } => TensorError::Dimension {
            op,
            axis,
            detail: format!("{detail} (layer {name})"),
        },
        other => other,
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn check_param_shapes(node: &LayerNode) -> Result<()> {
    let bad = |detail: String| Err(dim_err("graph", node.name.clone(), detail));
    let shape = |slot| node.param(slot).map(|t| t.shape().to_vec());
    match node.kind {
        LayerKind::Conv2d { .. } | LayerKind::DepthwiseConv2d { .. } => {
            let w = shape(Slot::Weight).unwrap_or_default();
            if w.len() != 4 {
                return bad(format!("conv weight must be 4-D, got {w:?}"));
            }
            if matches!(node.kind, LayerKind::DepthwiseConv2d { .. }) && w[1] != 1 {
                return bad(format!("depthwise weight must be (C,1,kH,kW), got {w:?}"));
            }
            if let Some(b) = shape(Slot::Bias) {
                if b != [w[0]] {
                    return bad(format!("bias {b:?} does not match {} filters", w[0]));
                }
            }
        }
        LayerKind::Dense => {
            let w = shape(Slot::Weight).unwrap_or_default();
            let b = shape(Slot::Bias).unwrap_or_default();
            if w.len() != 2 || b != [w[1]] {
                return bad(format!("dense weight {w:?} / bias {b:?} inconsistent"));
            }
        }
        LayerKind::BatchNorm { .. } => {
            let g = shape(Slot::Gamma).unwrap_or_default();
            if g.len() != 1 || Slot::ALL[2..].iter().any(|s| shape(*s) != Some(g.clone())) {
                return bad("batch-norm parameters must share one channel count".into());
            }
        }
        _ => {}
    }
    Ok(())
}

type SlotLookup<'p, T> = dyn Fn(Slot) -> Option<&'p Tensor<T>> + 'p;

fn req<'p, T: Real>(p: &SlotLookup<'p, T>, slot: Slot) -> Result<&'p Tensor<T>> {
    p(slot).ok_or_else(|| TensorError::State(format!("missing parameter {}", slot.name())))
}

fn forward_node<'p, T: Real>(
    node: &LayerNode,
    ins: &[&Tensor<T>],
    p: &SlotLookup<'p, T>,
    mode: Mode,
) -> Result<(Tensor<T>, NodeCache<T>)> {
    let x = ins[0];
    Ok(match node.kind {
        LayerKind::Conv2d { stride, padding } => (
            conv2d(x, req(p, Slot::Weight)?, p(Slot::Bias), stride, padding)?,
            NodeCache::None,
        ),
        LayerKind::DepthwiseConv2d { stride, padding } => (
            depthwise_conv2d(x, req(p, Slot::Weight)?, p(Slot::Bias), stride, padding)?,
            NodeCache::None,
        ),
        LayerKind::Pool2d {
            mode: pm,
            window,
            stride,
            padding,
        } => {
            let (y, argmax) = pool2d_padded(x, pm, window, stride, padding)?;
            (y, NodeCache::Argmax(argmax))
        }
        LayerKind::GlobalAvgPool => (global_avg_pool(x)?, NodeCache::None),
        LayerKind::Dense => (dense(x, req(p, Slot::Weight)?, req(p, Slot::Bias)?)?, NodeCache::None),
        LayerKind::BatchNorm { epsilon, .. } => {
            let bp = BnParams {
                gamma: req(p, Slot::Gamma)?,
                beta: req(p, Slot::Beta)?,
                running_mean: req(p, Slot::RunningMean)?,
                running_var: req(p, Slot::RunningVar)?,
            };
            let (y, cache) = batch_norm(x, &bp, mode.into(), T::lit(epsilon as f64))?;
            (y, NodeCache::Bn(cache))
        }
        LayerKind::Activation(m) => (activation(x, m), NodeCache::None),
        LayerKind::Merge(m) => (merge(ins, m)?, NodeCache::None),
    })
}

type NodeGrads<T> = (Vec<Tensor<T>>, Vec<(Slot, Tensor<T>)>);

fn backward_node<'p, T: Real>(
    node: &LayerNode,
    ins: &[&Tensor<T>],
    out: &Tensor<T>,
    cache: &NodeCache<T>,
    dy: &Tensor<T>,
    p: &SlotLookup<'p, T>,
) -> Result<NodeGrads<T>> {
    let x = ins[0];
    Ok(match (&node.kind, cache) {
        (LayerKind::Conv2d { stride, padding }, _) => {
            let g = conv2d_backward(x, req(p, Slot::Weight)?, dy, *stride, *padding)?;
            let mut slots = vec![(Slot::Weight, g.weights)];
            if p(Slot::Bias).is_some() {
                slots.push((Slot::Bias, g.bias));
            }
            (vec![g.input], slots)
        }
        (LayerKind::DepthwiseConv2d { stride, padding }, _) => {
            let g = depthwise_conv2d_backward(x, req(p, Slot::Weight)?, dy, *stride, *padding)?;
            let mut slots = vec![(Slot::Weight, g.weights)];
            if p(Slot::Bias).is_some() {
                slots.push((Slot::Bias, g.bias));
            }
            (vec![g.input], slots)
        }
        (
            LayerKind::Pool2d {
                mode,
                window,
                stride,
                padding,
            },
            NodeCache::Argmax(argmax),
        ) => (
            vec![pool2d_backward(x, dy, *mode, *window, *stride, *padding, argmax)?],
            vec![],
        ),
        (LayerKind::GlobalAvgPool, _) => (vec![global_avg_pool_backward(x.shape(), dy)?], vec![]),
        (LayerKind::Dense, _) => {
            let g = dense_backward(x, req(p, Slot::Weight)?, dy)?;
            (vec![g.input], vec![(Slot::Weight, g.weights), (Slot::Bias, g.bias)])
        }
        (LayerKind::BatchNorm { .. }, NodeCache::Bn(c)) => {
            let g = batch_norm_backward(req(p, Slot::Gamma)?, c, dy)?;
            (vec![g.input], vec![(Slot::Gamma, g.gamma), (Slot::Beta, g.beta)])
        }
        (LayerKind::Activation(m), _) => (vec![activation_backward(out, dy, *m)?], vec![]),
        (LayerKind::Merge(m), _) => {
            let shapes: Vec<&[usize]> = ins.iter().map(|t| t.shape()).collect();
            (merge_backward(&shapes, dy, *m)?, vec![])
        }
        (kind, _) => {
            return Err(TensorError::State(format!(
                "{} backward is missing its forward cache",
                kind.label()
            )))
        }
    })
}

/// Forward/backward session: backward is only legal after a forward pass.
pub struct Tape<'g, T: Real = f32> {
    graph: &'g LayerGraph,
    trace: Option<Trace<T>>,
}

impl<'g, T: Real> Tape<'g, T> {
    pub fn new(graph: &'g LayerGraph) -> Self {
        Self { graph, trace: None }
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<&Tensor<T>> {
        let trace = self.graph.forward_traced(input, mode)?;
        let trace = self.trace.insert(trace);
        Ok(&trace.outputs[self.graph.output])
    }

    /// Gradients of every parameter and of the input, given dLoss/dOutput.
    pub fn backward(&self, loss_gradient: &Tensor<T>) -> Result<Gradients<T>> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| TensorError::State("backward called before forward".into()))?;
        self.graph.backward(trace, &[(self.graph.output, loss_gradient)])
    }

    pub fn trace(&self) -> Option<&Trace<T>> {
        self.trace.as_ref()
    }
}

/// Incremental graph construction with generated unique names.
pub struct GraphBuilder {
    nodes: Vec<LayerNode>,
    input_channels: usize,
}

impl GraphBuilder {
    pub fn new(input_channels: usize) -> Self {
        Self {
            nodes: Vec::new(),
            input_channels,
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        kind: LayerKind,
        inputs: Vec<NodeRef>,
        params: Vec<(Slot, Tensor<f32>)>,
    ) -> NodeRef {
        self.nodes.push(LayerNode {
            name: name.into(),
            kind,
            inputs,
            params: params.into_iter().map(|(s, t)| (s, StoredTensor::F32(t))).collect(),
        });
        NodeRef::Node(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn finish(self, output: NodeRef) -> Result<LayerGraph> {
        match output {
            NodeRef::Node(i) => LayerGraph::new(self.nodes, i, self.input_channels),
            NodeRef::Input => Err(param_err("graph", "output must be a layer node")),
        }
    }
}
