//! The `MLRM` model file.
//!
//! ```text
//! "MLRM" | u16 version | u16 section count
//! section table: (u8 kind, u64 offset, u64 length) per section
//! section 1, metadata: UTF-8 `key=value` lines
//! section 2, topology: u32 input channels, u32 output node, u32 node count,
//!            then per node: u16 name length, name, u8 kind tag, kind fields,
//!            u8 input count, u32 per input (u32::MAX = graph input),
//!            u8 param count, u8 slot tag per param
//! section 3, tensors: u32 count, then per tensor: u16 name length, name,
//!            u8 dtype (0 f32, 1 i8), u8 rank, u32 per dim,
//!            [f32 scale, u8 zero point if i8], payload
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{QParams, QTensor};
use crate::graph::{LayerGraph, LayerKind, LayerNode, NodeRef, Slot};
use crate::imgproc::{InputMode, PreprocessConfig};
use crate::model::CellModel;
use crate::ops::{ActivationMode, MergeMode, PoolMode};
use crate::tensor::{StoredTensor, Tensor};

pub const MAGIC: [u8; 4] = *b"MLRM";
pub const VERSION: u16 = 1;

const SECTION_META: u8 = 1;
const SECTION_TOPOLOGY: u8 = 2;
const SECTION_TENSORS: u8 = 3;
/// Bytes per section-table entry.
pub const SECTION_ENTRY_BYTES: usize = 17;
/// Magic, version and section count.
pub const HEADER_BYTES: usize = 8;
const INPUT_REF: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u16),
    #[error("model file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("model file io: {0}")]
    Io(#[from] std::io::Error),
}

fn corrupt(msg: impl Into<String>) -> FormatError {
    FormatError::Corrupt(msg.into())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn name(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(FormatError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32(&mut self, what: &'static str) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn name(&mut self, what: &'static str) -> Result<String, FormatError> {
        let n = self.u16(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| corrupt(format!("{what} is not UTF-8")))
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn metadata(m: &CellModel) -> String {
    let p = &m.preprocess;
    format!(
        "arch={}\ninput_mode={}\nwidth={}\nheight={}\ngaussian_kernel_size={}\ngaussian_sigma={}\ncanny_low={}\ncanny_high={}\n",
        m.arch,
        p.input_mode.as_str(),
        p.target_size.0,
        p.target_size.1,
        p.gaussian_kernel_size,
        p.gaussian_sigma,
        p.canny_low,
        p.canny_high
    )
}

fn parse_metadata(text: &str) -> Result<(String, PreprocessConfig), FormatError> {
    let mut arch = None;
    let mut p = PreprocessConfig::default();
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, FormatError> {
        v.parse().map_err(|_| corrupt(format!("metadata {k}={v:?}")))
    }
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| corrupt(format!("metadata line {line:?}")))?;
        match k {
            "arch" => arch = Some(v.to_string()),
            "input_mode" => p.input_mode = v.parse::<InputMode>().map_err(|e| corrupt(e.to_string()))?,
            "width" => p.target_size.0 = num(k, v)?,
            "height" => p.target_size.1 = num(k, v)?,
            "gaussian_kernel_size" => p.gaussian_kernel_size = num(k, v)?,
            "gaussian_sigma" => p.gaussian_sigma = num(k, v)?,
            "canny_low" => p.canny_low = num(k, v)?,
            "canny_high" => p.canny_high = num(k, v)?,
            _ => {}
        }
    }
    p.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok((arch.ok_or_else(|| corrupt("metadata lacks arch"))?, p))
}

fn write_kind(w: &mut Writer, kind: &LayerKind) {
    match *kind {
        LayerKind::Conv2d { stride, padding } => {
            w.u8(0);
            w.u16(stride as u16);
            w.u16(padding as u16);
        }
        LayerKind::DepthwiseConv2d { stride, padding } => {
            w.u8(1);
            w.u16(stride as u16);
            w.u16(padding as u16);
        }
        LayerKind::Pool2d {
            mode,
            window,
            stride,
            padding,
        } => {
            w.u8(2);
            w.u8(match mode {
                PoolMode::Max => 0,
                PoolMode::Avg => 1,
            });
            w.u16(window as u16);
            w.u16(stride as u16);
            w.u16(padding as u16);
        }
        LayerKind::GlobalAvgPool => w.u8(3),
        LayerKind::Dense => w.u8(4),
        LayerKind::BatchNorm { epsilon, momentum } => {
            w.u8(5);
            w.f32(epsilon);
            w.f32(momentum);
        }
        LayerKind::Activation(a) => {
            w.u8(6);
            w.u8(match a {
                ActivationMode::Relu => 0,
                ActivationMode::Sigmoid => 1,
                ActivationMode::Softmax => 2,
            });
        }
        LayerKind::Merge(m) => {
            w.u8(7);
            w.u8(match m {
                MergeMode::ConcatChannels => 0,
                MergeMode::Add => 1,
            });
        }
    }
}

fn read_kind(r: &mut Reader<'_>) -> Result<LayerKind, FormatError> {
    const W: &str = "layer kind";
    Ok(match r.u8(W)? {
        0 => LayerKind::Conv2d {
            stride: r.u16(W)? as usize,
            padding: r.u16(W)? as usize,
        },
        1 => LayerKind::DepthwiseConv2d {
            stride: r.u16(W)? as usize,
            padding: r.u16(W)? as usize,
        },
        2 => LayerKind::Pool2d {
            mode: match r.u8(W)? {
                0 => PoolMode::Max,
                1 => PoolMode::Avg,
                t => return Err(corrupt(format!("pool mode tag {t}"))),
            },
            window: r.u16(W)? as usize,
            stride: r.u16(W)? as usize,
            padding: r.u16(W)? as usize,
        },
        3 => LayerKind::GlobalAvgPool,
        4 => LayerKind::Dense,
        5 => LayerKind::BatchNorm {
            epsilon: r.f32(W)?,
            momentum: r.f32(W)?,
        },
        6 => LayerKind::Activation(match r.u8(W)? {
            0 => ActivationMode::Relu,
            1 => ActivationMode::Sigmoid,
            2 => ActivationMode::Softmax,
            t => return Err(corrupt(format!("activation tag {t}"))),
        }),
        7 => LayerKind::Merge(match r.u8(W)? {
            0 => MergeMode::ConcatChannels,
            1 => MergeMode::Add,
            t => return Err(corrupt(format!("merge tag {t}"))),
        }),
        t => return Err(corrupt(format!("layer kind tag {t}"))),
    })
}

fn slot_tag(slot: Slot) -> u8 {
    Slot::ALL.iter().position(|&s| s == slot).expect("slot listed") as u8
}

fn topology(g: &LayerGraph) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.u32(g.input_channels() as u32);
    w.u32(g.output() as u32);
    w.u32(g.nodes().len() as u32);
    for node in g.nodes() {
        w.name(&node.name);
        write_kind(&mut w, &node.kind);
        w.u8(node.inputs.len() as u8);
        for r in &node.inputs {
            w.u32(match r {
                NodeRef::Input => INPUT_REF,
                NodeRef::Node(i) => *i as u32,
            });
        }
        w.u8(node.params.len() as u8);
        for (slot, _) in &node.params {
            w.u8(slot_tag(*slot));
        }
    }
    w.0
}

/// Bytes one tensor record occupies in the tensor section.
pub fn tensor_record_bytes(name: &str, t: &StoredTensor) -> usize {
    let head = 2 + name.len() + 1 + 1 + 4 * t.shape().len();
    match t {
        StoredTensor::F32(t) => head + 4 * t.len(),
        StoredTensor::I8(q) => head + 5 + q.codes().len(),
    }
}

fn write_tensor(w: &mut Writer, name: &str, t: &StoredTensor) {
    w.name(name);
    w.u8(match t {
        StoredTensor::F32(_) => 0,
        StoredTensor::I8(_) => 1,
    });
    w.u8(t.shape().len() as u8);
    for &d in t.shape() {
        w.u32(d as u32);
    }
    match t {
        StoredTensor::F32(t) => {
            for &v in t.data() {
                w.f32(v);
            }
        }
        StoredTensor::I8(q) => {
            w.f32(q.qparams().scale);
            w.u8(q.qparams().zero_point);
            w.0.extend_from_slice(q.codes());
        }
    }
}

fn read_tensor(r: &mut Reader<'_>) -> Result<(String, StoredTensor), FormatError> {
    const W: &str = "tensor record";
    let name = r.name(W)?;
    let dtype = r.u8(W)?;
    let rank = r.u8(W)? as usize;
    let shape = (0..rank).map(|_| r.u32(W).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
    let len = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| corrupt(format!("tensor {name} shape overflows")))?;
    let bad_shape = |e: crate::tensor::TensorError| corrupt(format!("tensor {name}: {e}"));
    let t = match dtype {
        0 => {
            let bytes = r.take(len.checked_mul(4).ok_or(FormatError::Truncated(W))?, "tensor payload")?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            StoredTensor::F32(Tensor::new(shape, data).map_err(bad_shape)?)
        }
        1 => {
            let scale = r.f32(W)?;
            let zero_point = r.u8(W)?;
            if !(scale.is_finite() && scale > 0.0) {
                return Err(corrupt(format!("tensor {name} has scale {scale}")));
            }
            let codes = r.take(len, "tensor payload")?.to_vec();
            StoredTensor::I8(QTensor::new(shape, codes, QParams { scale, zero_point }).map_err(bad_shape)?)
        }
        t => return Err(corrupt(format!("tensor {name} dtype tag {t}"))),
    };
    Ok((name, t))
}

pub fn serialize_model(m: &CellModel) -> Vec<u8> {
    let meta = metadata(m).into_bytes();
    let topo = topology(&m.graph);
    let mut tensors = Writer(Vec::new());
    let count: usize = m.graph.nodes().iter().map(|n| n.params.len()).sum();
    tensors.u32(count as u32);
    for node in m.graph.nodes() {
        for (slot, t) in &node.params {
            write_tensor(&mut tensors, &format!("{}.{}", node.name, slot.name()), t);
        }
    }
    let sections = [(SECTION_META, meta), (SECTION_TOPOLOGY, topo), (SECTION_TENSORS, tensors.0)];
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&MAGIC);
    w.u16(VERSION);
    w.u16(sections.len() as u16);
    let mut offset = (HEADER_BYTES + SECTION_ENTRY_BYTES * sections.len()) as u64;
    for (kind, body) in &sections {
        w.u8(*kind);
        w.u64(offset);
        w.u64(body.len() as u64);
        offset += body.len() as u64;
    }
    for (_, body) in sections {
        w.0.extend_from_slice(&body);
    }
    w.0
}

pub fn read_model(bytes: &[u8]) -> Result<CellModel, FormatError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| FormatError::BadMagic)? != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let n = r.u16("section table")? as usize;
    let mut meta = None;
    let mut topo = None;
    let mut tensors = None;
    for _ in 0..n {
        let kind = r.u8("section table")?;
        let offset = r.u64("section table")? as usize;
        let len = r.u64("section table")? as usize;
        let end = offset.checked_add(len).filter(|&e| e <= bytes.len()).ok_or(FormatError::Truncated("section"))?;
        let body = &bytes[offset..end];
        match kind {
            SECTION_META => meta = Some(body),
            SECTION_TOPOLOGY => topo = Some(body),
            SECTION_TENSORS => tensors = Some(body),
            _ => {}
        }
    }
    let meta = std::str::from_utf8(meta.ok_or_else(|| corrupt("missing metadata section"))?)
        .map_err(|_| corrupt("metadata is not UTF-8"))?;
    let (arch, preprocess) = parse_metadata(meta)?;

    let mut t = Reader {
        buf: tensors.ok_or_else(|| corrupt("missing tensor section"))?,
        pos: 0,
    };
    let tensor_count = t.u32("tensor section")? as usize;

    const W: &str = "topology";
    let mut r = Reader {
        buf: topo.ok_or_else(|| corrupt("missing topology section"))?,
        pos: 0,
    };
    let input_channels = r.u32(W)? as usize;
    let output = r.u32(W)? as usize;
    let node_count = r.u32(W)? as usize;
    let mut nodes = Vec::with_capacity(node_count.min(4096));
    let mut seen = 0;
    for _ in 0..node_count {
        let name = r.name(W)?;
        let kind = read_kind(&mut r)?;
        let inputs = (0..r.u8(W)?)
            .map(|_| {
                r.u32(W).map(|v| match v {
                    INPUT_REF => NodeRef::Input,
                    i => NodeRef::Node(i as usize),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut params = Vec::new();
        for _ in 0..r.u8(W)? {
            let tag = r.u8(W)? as usize;
            let slot = *Slot::ALL.get(tag).ok_or_else(|| corrupt(format!("slot tag {tag}")))?;
            let (tname, tensor) = read_tensor(&mut t)?;
            let expected = format!("{name}.{}", slot.name());
            if tname != expected {
                return Err(corrupt(format!("tensor {tname} where {expected} was expected")));
            }
            seen += 1;
            params.push((slot, tensor));
        }
        nodes.push(LayerNode {
            name,
            kind,
            inputs,
            params,
        });
    }
    if !r.done() || !t.done() || seen != tensor_count {
        return Err(corrupt("trailing or missing section data"));
    }
    let graph = LayerGraph::new(nodes, output, input_channels).map_err(|e| corrupt(e.to_string()))?;
    Ok(CellModel {
        arch,
        preprocess,
        graph,
    })
}

/// Writes the model and returns the file length in bytes.
pub fn write_model(m: &CellModel, path: impl AsRef<Path>) -> Result<u64, FormatError> {
    let bytes = serialize_model(m);
    fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CellModel, FormatError> {
    read_model(&fs::read(path)?)
}
