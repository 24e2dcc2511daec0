//! Builders for small analogues of the classic CNN block families and the
//! five desk-scale classifier presets assembled from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{GraphBuilder, LayerGraph, LayerKind, NodeRef, Slot};
use crate::ops::{ActivationMode, MergeMode, PoolMode};
use crate::ops::norm::{BN_EPSILON, BN_MOMENTUM};
use crate::tensor::{dim_err, param_err, Result, Tensor};

pub const PRESETS: [&str; 5] = ["tiny_vgg", "tiny_mobile", "tiny_inception", "tiny_residual", "tiny_dense"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// conv → BN → relu
    PlainConv,
    /// depthwise → BN → relu → pointwise → BN → relu
    DepthwiseSeparable,
    /// parallel 1×1, 3×3, 5×5 and maxpool+1×1 branches, channel-concatenated
    Inception,
    /// two conv → BN → relu stages added to an identity (or 1×1 projection) shortcut
    Residual,
    /// layers whose input is the concat of the block input and every earlier layer output
    DenseBlock,
}

fn default_kernel() -> usize {
    3
}
fn default_one() -> usize {
    1
}
fn default_multiplier() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    /// Declared input channels before width scaling; checked when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels_in: Option<usize>,
    /// Output channels before width scaling (unused by inception and dense blocks).
    #[serde(default)]
    pub channels_out: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_one")]
    pub stride: usize,
    /// Width multiplier α ∈ (0, 1].
    #[serde(default = "default_multiplier")]
    pub width_multiplier: f64,
    /// Growth rate k of a dense block.
    #[serde(default)]
    pub growth_rate: usize,
    /// Layer count of a dense block.
    #[serde(default)]
    pub layers: usize,
    /// Inception branch widths: 1×1, 3×3, 5×5, pool projection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branches: Option<[usize; 4]>,
    /// Append a 2×2 stride-2 max pool after the block.
    #[serde(default)]
    pub pool_after: bool,
}

impl BlockSpec {
    fn base(kind: BlockKind, channels_out: usize) -> Self {
        Self {
            kind,
            channels_in: None,
            channels_out,
            kernel: 3,
            stride: 1,
            width_multiplier: 1.0,
            growth_rate: 0,
            layers: 0,
            branches: None,
            pool_after: false,
        }
    }

    pub fn plain_conv(channels_out: usize) -> Self {
        Self::base(BlockKind::PlainConv, channels_out)
    }

    pub fn depthwise_separable(channels_out: usize) -> Self {
        Self::base(BlockKind::DepthwiseSeparable, channels_out)
    }

    pub fn inception(branches: [usize; 4]) -> Self {
        Self {
            branches: Some(branches),
            ..Self::base(BlockKind::Inception, 0)
        }
    }

    pub fn residual(channels_out: usize) -> Self {
        Self::base(BlockKind::Residual, channels_out)
    }

    pub fn dense_block(layers: usize, growth_rate: usize) -> Self {
        Self {
            layers,
            growth_rate,
            ..Self::base(BlockKind::DenseBlock, 0)
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn kernel(mut self, kernel: usize) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn alpha(mut self, alpha: f64) -> Self {
        self.width_multiplier = alpha;
        self
    }

    pub fn pooled(mut self) -> Self {
        self.pool_after = true;
        self
    }

    pub fn input(mut self, channels_in: usize) -> Self {
        self.channels_in = Some(channels_in);
        self
    }

    fn scale(&self, channels: usize) -> usize {
        ((channels as f64 * self.width_multiplier).round() as usize).max(1)
    }

    /// Output channels before width scaling, given the nominal input.
    pub fn nominal_out(&self, nominal_in: usize) -> usize {
        match self.kind {
            BlockKind::Inception => self.branches.map_or(0, |b| b.iter().sum()),
            BlockKind::DenseBlock => nominal_in + self.layers * self.growth_rate,
            _ => self.channels_out,
        }
    }

    fn validate(&self) -> Result<()> {
        let op = "build_block";
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return Err(param_err(op, format!("width multiplier {} outside (0, 1]", self.width_multiplier)));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(param_err(op, format!("kernel {} must be odd", self.kernel)));
        }
        if self.stride == 0 {
            return Err(param_err(op, "stride must be >= 1"));
        }
        match self.kind {
            BlockKind::PlainConv | BlockKind::DepthwiseSeparable if self.channels_out == 0 => {
                Err(param_err(op, "channels_out must be positive"))
            }
            BlockKind::Residual if self.channels_out == 0 || self.stride != 1 => {
                Err(param_err(op, "residual blocks need channels_out > 0 and stride 1"))
            }
            BlockKind::Inception if self.branches.is_none_or(|b| b.contains(&0)) || self.stride != 1 => {
                Err(param_err(op, "inception blocks need four positive branch widths and stride 1"))
            }
            BlockKind::DenseBlock if self.layers == 0 || self.growth_rate == 0 || self.stride != 1 => {
                Err(param_err(op, "dense blocks need layers > 0, growth_rate > 0 and stride 1"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
    #[serde(default = "default_input_size")]
    pub input_size: u32,
    /// Resolution multiplier ρ ∈ (0, 1], applied once to the input size.
    #[serde(default = "default_multiplier")]
    pub resolution_multiplier: f64,
    pub blocks: Vec<BlockSpec>,
}

fn default_input_channels() -> usize {
    4
}
fn default_input_size() -> u32 {
    75
}

impl ModelSpec {
    pub fn input_resolution(&self) -> u32 {
        ((self.input_size as f64 * self.resolution_multiplier).round() as u32).max(1)
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }
}

/// Preset architectures for a given number of input channels.
pub fn preset(name: &str, input_channels: usize) -> Option<ModelSpec> {
    use BlockSpec as B;
    let stem = B::plain_conv(16).stride(2).pooled();
    let blocks = match name {
        "tiny_vgg" => vec![stem, B::plain_conv(32).pooled(), B::plain_conv(32), B::plain_conv(64)],
        "tiny_mobile" => vec![
            stem,
            B::depthwise_separable(32),
            B::depthwise_separable(64).stride(2),
            B::depthwise_separable(64),
        ],
        "tiny_inception" => vec![stem, B::inception([8, 16, 4, 4]).pooled(), B::inception([16, 24, 8, 8])],
        "tiny_residual" => vec![stem, B::residual(16), B::residual(32).pooled(), B::residual(32)],
        "tiny_dense" => vec![
            stem,
            B::dense_block(3, 8).pooled(),
            B::plain_conv(24).kernel(1),
            B::dense_block(3, 8),
        ],
        _ => return None,
    };
    Some(ModelSpec {
        name: name.to_string(),
        input_channels,
        input_size: 75,
        resolution_multiplier: 1.0,
        blocks,
    })
}

/// `tiny_mobile` with the width multiplier applied to every block.
pub fn tiny_mobile(input_channels: usize, alpha: f64) -> ModelSpec {
    let mut spec = preset("tiny_mobile", input_channels).expect("preset exists");
    for b in &mut spec.blocks {
        b.width_multiplier = alpha;
    }
    spec
}

struct Ctx<'a> {
    b: &'a mut GraphBuilder,
    rng: &'a mut ChaCha8Rng,
}

impl Ctx<'_> {
    fn he_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor<f32> {
        let limit = (6.0 / fan_in as f64).sqrt() as f32;
        Tensor::from_fn(shape.to_vec(), |_| self.rng.gen_range(-limit..limit))
    }

    fn conv(&mut self, name: &str, input: NodeRef, cin: usize, cout: usize, k: usize, stride: usize) -> NodeRef {
        let w = self.he_uniform(&[cout, cin, k, k], cin * k * k);
        self.b.add(
            format!("{name}.conv"),
            LayerKind::Conv2d { stride, padding: k / 2 },
            vec![input],
            vec![(Slot::Weight, w)],
        )
    }

    fn bn(&mut self, name: &str, input: NodeRef, c: usize) -> NodeRef {
        self.b.add(
            format!("{name}.bn"),
            LayerKind::BatchNorm {
                epsilon: BN_EPSILON,
                momentum: BN_MOMENTUM,
            },
            vec![input],
            vec![
                (Slot::Gamma, Tensor::full([c], 1.0)),
                (Slot::Beta, Tensor::zeros([c])),
                (Slot::RunningMean, Tensor::zeros([c])),
                (Slot::RunningVar, Tensor::full([c], 1.0)),
            ],
        )
    }

    fn relu(&mut self, name: &str, input: NodeRef) -> NodeRef {
        self.b.add(format!("{name}.relu"), LayerKind::Activation(ActivationMode::Relu), vec![input], vec![])
    }

    fn conv_bn_relu(&mut self, name: &str, input: NodeRef, cin: usize, cout: usize, k: usize, stride: usize) -> NodeRef {
        let c = self.conv(name, input, cin, cout, k, stride);
        let n = self.bn(name, c, cout);
        self.relu(name, n)
    }

    fn block(&mut self, spec: &BlockSpec, input: NodeRef, cin: usize, prefix: &str) -> (NodeRef, usize) {
        let k = spec.kernel;
        let (out, channels) = match spec.kind {
            BlockKind::PlainConv => {
                let cout = spec.scale(spec.channels_out);
                (self.conv_bn_relu(prefix, input, cin, cout, k, spec.stride), cout)
            }
            BlockKind::DepthwiseSeparable => {
                let cout = spec.scale(spec.channels_out);
                let w = self.he_uniform(&[cin, 1, k, k], k * k);
                let dw = self.b.add(
                    format!("{prefix}.dw"),
                    LayerKind::DepthwiseConv2d {
                        stride: spec.stride,
                        padding: k / 2,
                    },
                    vec![input],
                    vec![(Slot::Weight, w)],
                );
                let dn = self.bn(&format!("{prefix}.dw"), dw, cin);
                let dr = self.relu(&format!("{prefix}.dw"), dn);
                (self.conv_bn_relu(&format!("{prefix}.pw"), dr, cin, cout, 1, 1), cout)
            }
            BlockKind::Inception => {
                let [b1, b3, b5, bp] = spec.branches.expect("validated").map(|c| spec.scale(c));
                let p1 = self.conv_bn_relu(&format!("{prefix}.b1"), input, cin, b1, 1, 1);
                let p3 = self.conv_bn_relu(&format!("{prefix}.b3"), input, cin, b3, 3, 1);
                let p5 = self.conv_bn_relu(&format!("{prefix}.b5"), input, cin, b5, 5, 1);
                let pool = self.b.add(
                    format!("{prefix}.bp.pool"),
                    LayerKind::Pool2d {
                        mode: PoolMode::Max,
                        window: 3,
                        stride: 1,
                        padding: 1,
                    },
                    vec![input],
                    vec![],
                );
                let pp = self.conv_bn_relu(&format!("{prefix}.bp"), pool, cin, bp, 1, 1);
                let cat = self.b.add(
                    format!("{prefix}.cat"),
                    LayerKind::Merge(MergeMode::ConcatChannels),
                    vec![p1, p3, p5, pp],
                    vec![],
                );
                (cat, b1 + b3 + b5 + bp)
            }
            BlockKind::Residual => {
                let cout = spec.scale(spec.channels_out);
                let a = self.conv_bn_relu(&format!("{prefix}.a"), input, cin, cout, k, 1);
                let branch = self.conv_bn_relu(&format!("{prefix}.b"), a, cout, cout, k, 1);
                let shortcut = if cin == cout {
                    input
                } else {
                    let p = self.conv(&format!("{prefix}.proj"), input, cin, cout, 1, 1);
                    self.bn(&format!("{prefix}.proj"), p, cout)
                };
                let add = self.b.add(
                    format!("{prefix}.add"),
                    LayerKind::Merge(MergeMode::Add),
                    vec![shortcut, branch],
                    vec![],
                );
                (add, cout)
            }
            BlockKind::DenseBlock => {
                let growth = spec.scale(spec.growth_rate);
                let mut features = vec![input];
                let mut channels = cin;
                for layer in 0..spec.layers {
                    let src = if features.len() == 1 {
                        input
                    } else {
                        self.b.add(
                            format!("{prefix}.l{layer}.cat"),
                            LayerKind::Merge(MergeMode::ConcatChannels),
                            features.clone(),
                            vec![],
                        )
                    };
                    let out = self.conv_bn_relu(&format!("{prefix}.l{layer}"), src, channels, growth, k, 1);
                    features.push(out);
                    channels += growth;
                }
                let cat = self.b.add(
                    format!("{prefix}.cat"),
                    LayerKind::Merge(MergeMode::ConcatChannels),
                    features,
                    vec![],
                );
                (cat, channels)
            }
        };
        if spec.pool_after {
            let pool = self.b.add(
                format!("{prefix}.pool"),
                LayerKind::Pool2d {
                    mode: PoolMode::Max,
                    window: 2,
                    stride: 2,
                    padding: 0,
                },
                vec![out],
                vec![],
            );
            (pool, channels)
        } else {
            (out, channels)
        }
    }
}

/// A standalone graph containing just one block, its output designated.
pub fn build_block(spec: &BlockSpec, input_channels: usize, seed: u64) -> Result<LayerGraph> {
    spec.validate()?;
    if let Some(cin) = spec.channels_in {
        if cin != input_channels {
            return Err(dim_err("build_block", "channels_in", format!("spec declares {cin}, input has {input_channels}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new(input_channels);
    let (out, _) = Ctx { b: &mut b, rng: &mut rng }.block(spec, NodeRef::Input, input_channels, "b0");
    if b.is_empty() {
        return Err(param_err("build_block", "block produced no layers"));
    }
    b.finish(out)
}

/// Full classifier: blocks, then global average pool → dense(1) → sigmoid.
pub fn assemble_model(spec: &ModelSpec, seed: u64) -> Result<LayerGraph> {
    if !(spec.resolution_multiplier > 0.0 && spec.resolution_multiplier <= 1.0) {
        return Err(param_err(
            "assemble_model",
            format!("resolution multiplier {} outside (0, 1]", spec.resolution_multiplier),
        ));
    }
    if spec.input_channels == 0 {
        return Err(param_err("assemble_model", "input_channels must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new(spec.input_channels);
    let mut node = NodeRef::Input;
    let mut actual = spec.input_channels;
    let mut nominal = spec.input_channels;
    let mut size = spec.input_resolution() as usize;
    for (i, block) in spec.blocks.iter().enumerate() {
        block.validate().map_err(|e| match e {
            crate::tensor::TensorError::Param { detail, .. } => param_err("assemble_model", format!("block {i}: {detail}")),
            other => other,
        })?;
        if let Some(cin) = block.channels_in {
            if cin != nominal {
                return Err(dim_err(
                    "assemble_model",
                    format!("block {i}"),
                    format!("declares {cin} input channels but the previous stage yields {nominal}"),
                ));
            }
        }
        size = size.div_ceil(block.stride);
        if block.pool_after {
            size /= 2;
        }
        if size == 0 {
            return Err(dim_err(
                "assemble_model",
                format!("block {i}"),
                format!("spatial size collapses to zero at input {}", spec.input_resolution()),
            ));
        }
        let (out, ch) = Ctx { b: &mut b, rng: &mut rng }.block(block, node, actual, &format!("b{i}"));
        node = out;
        actual = ch;
        nominal = block.nominal_out(nominal);
    }
    let gap = b.add("gap", LayerKind::GlobalAvgPool, vec![node], vec![]);
    let limit = (6.0 / actual as f64).sqrt() as f32;
    let w = Tensor::from_fn([actual, 1], |_| rng.gen_range(-limit..limit));
    let fc = b.add(
        "fc",
        LayerKind::Dense,
        vec![gap],
        vec![(Slot::Weight, w), (Slot::Bias, Tensor::zeros([1]))],
    );
    let prob = b.add("prob", LayerKind::Activation(ActivationMode::Sigmoid), vec![fc], vec![]);
    b.finish(prob)
}

pub fn count_params(graph: &LayerGraph) -> usize {
    graph.count_params()
}
