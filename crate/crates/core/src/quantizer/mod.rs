//! Post-training weight quantization to 8-bit affine codes, the compact
//! model file format, and size/latency/accuracy benchmarking.


mod bench;
mod format;

use thiserror::Error;

use crate::graph::{LayerGraph, LayerKind, LayerNode, NodeRef, Slot};
use crate::tensor::{dim_err, Result as TensorResult, StoredTensor, Tensor};

pub use bench::{benchmark_model, write_report_csv, BenchReport};
pub use format::{
    load_model, read_model, serialize_model, tensor_record_bytes, write_model, FormatError, HEADER_BYTES, MAGIC,
    SECTION_ENTRY_BYTES, VERSION,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("tensor contains a non-finite value at index {0}")]
    NonFinite(usize),
}

/// Per-tensor affine mapping `x ≈ scale · (q − zero_point)`, `q ∈ [0, 255]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QParams {
    pub scale: f32,
    pub zero_point: u8,
}

impl QParams {
    pub fn quantize(&self, x: f32) -> u8 {
        // f64::round is round-half-away-from-zero; f64 keeps exact .5 ties exact.
        ((x as f64 / self.scale as f64).round() + self.zero_point as f64).clamp(0.0, 255.0) as u8
    }

    pub fn dequantize(&self, q: u8) -> f32 {
        self.scale * (q as f32 - self.zero_point as f32)
    }
}

/// Quantized tensor: one code byte per element plus its qparams.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    shape: Vec<usize>,
    codes: Vec<u8>,
    qparams: QParams,
}

impl QTensor {
    pub fn new(shape: Vec<usize>, codes: Vec<u8>, qparams: QParams) -> TensorResult<Self> {
        if shape.iter().product::<usize>() != codes.len() || shape.contains(&0) {
            return Err(dim_err("qtensor", "data", format!("shape {shape:?} vs {} codes", codes.len())));
        }
        Ok(Self { shape, codes, qparams })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn qparams(&self) -> QParams {
        self.qparams
    }

    pub fn dequantize(&self) -> Tensor<f32> {
        Tensor::new(
            self.shape.clone(),
            self.codes.iter().map(|&q| self.qparams.dequantize(q)).collect(),
        )
        .expect("shape validated at construction")
    }
}

/// Asymmetric qparams over the tensor's range widened to include zero, so
/// the zero point always lands inside [0, 255]. An all-zero tensor gets
/// scale 1 and zero point 0.
pub fn compute_qparams(t: &Tensor<f32>) -> Result<QParams, QuantError> {
    if let Some(i) = t.data().iter().position(|v| !v.is_finite()) {
        return Err(QuantError::NonFinite(i));
    }
    let lo = t.data().iter().copied().fold(0.0f32, f32::min);
    let hi = t.data().iter().copied().fold(0.0f32, f32::max);
    if hi - lo <= f32::EPSILON * hi.abs().max(lo.abs()).max(f32::MIN_POSITIVE) {
        return Ok(QParams {
            scale: 1.0,
            zero_point: 0,
        });
    }
    let scale = (hi as f64 - lo as f64) / 255.0;
    let zero_point = (-(lo as f64) / scale).round().clamp(0.0, 255.0) as u8;
    Ok(QParams {
        scale: scale as f32,
        zero_point,
    })
}

pub fn quantize_tensor(t: &Tensor<f32>, q: QParams) -> QTensor {
    QTensor {
        shape: t.shape().to_vec(),
        codes: t.data().iter().map(|&x| q.quantize(x)).collect(),
        qparams: q,
    }
}

pub fn dequantize_tensor(q: &QTensor) -> Tensor<f32> {
    q.dequantize()
}

/// Weight-only post-training quantization.
///
/// Batch norms that directly follow a convolution are folded into its
/// weights and bias first. Every conv, depthwise and dense weight then
/// becomes int8; biases and any remaining batch-norm tensors stay float32.
pub fn quantize_model(m: &LayerGraph) -> Result<LayerGraph, QuantError> {
    let mut g = fold_batch_norms(m);
    for (_, slot, t) in g.params_mut() {
        if slot != Slot::Weight {
            continue;
        }
        if let StoredTensor::F32(w) = t {
            let q = compute_qparams(w)?;
            *t = StoredTensor::I8(quantize_tensor(w, q));
        }
    }
    Ok(g)
}

/// Folds `conv → batch_norm` pairs into a single biased convolution.
pub fn fold_batch_norms(m: &LayerGraph) -> LayerGraph {
    let (mut nodes, mut output, input_channels) = m.clone().into_parts();
    loop {
        let consumers = |j: usize, nodes: &[LayerNode]| {
            nodes
                .iter()
                .filter(|n| n.inputs.contains(&NodeRef::Node(j)))
                .count()
        };
        let candidate = nodes.iter().enumerate().find_map(|(i, n)| match (&n.kind, n.inputs.as_slice()) {
            (LayerKind::BatchNorm { .. }, [NodeRef::Node(j)])
                if nodes[*j].kind.is_conv()
                    && *j != output
                    && consumers(*j, &nodes) == 1
                    && nodes[*j].params.iter().all(|(_, t)| t.as_f32().is_some())
                    && n.params.iter().all(|(_, t)| t.as_f32().is_some()) =>
            {
                Some((i, *j))
            }
            _ => None,
        });
        let Some((bn, conv)) = candidate else { break };
        let LayerKind::BatchNorm { epsilon, .. } = nodes[bn].kind else { unreachable!() };
        let get = |slot| nodes[bn].param(slot).and_then(StoredTensor::as_f32).unwrap().data().to_vec();
        let (gamma, beta, mean, var) = (get(Slot::Gamma), get(Slot::Beta), get(Slot::RunningMean), get(Slot::RunningVar));
        let w = nodes[conv].param(Slot::Weight).and_then(StoredTensor::as_f32).unwrap().clone();
        let out_ch = w.shape()[0];
        let per = w.len() / out_ch;
        let bias = nodes[conv]
            .param(Slot::Bias)
            .and_then(StoredTensor::as_f32)
            .map(|b| b.data().to_vec())
            .unwrap_or_else(|| vec![0.0; out_ch]);
        let mut wd = w.data().to_vec();
        let mut bd = vec![0.0f32; out_ch];
        for o in 0..out_ch {
            let k = gamma[o] as f64 / (var[o] as f64 + epsilon as f64).sqrt();
            for v in &mut wd[o * per..(o + 1) * per] {
                *v = (*v as f64 * k) as f32;
            }
            bd[o] = ((bias[o] as f64 - mean[o] as f64) * k + beta[o] as f64) as f32;
        }
        let conv_node = &mut nodes[conv];
        conv_node.params = vec![
            (Slot::Weight, StoredTensor::F32(Tensor::new(w.shape().to_vec(), wd).expect("same shape"))),
            (Slot::Bias, StoredTensor::F32(Tensor::new([out_ch], bd).expect("bias shape"))),
        ];
        nodes.remove(bn);
        for n in &mut nodes {
            for r in &mut n.inputs {
                if let NodeRef::Node(k) = r {
                    if *k == bn {
                        *k = conv;
                    } else if *k > bn {
                        *k -= 1;
                    }
                }
            }
        }
        if output == bn {
            output = conv;
        } else if output > bn {
            output -= 1;
        }
    }
    LayerGraph::new(nodes, output, input_channels).expect("folding preserves graph validity")
}

/// Bytes of parameter payload by dtype: (float32 bytes, int8 bytes).
pub fn payload_bytes(g: &LayerGraph) -> (usize, usize) {
    let mut f = 0;
    let mut q = 0;
    for node in g.nodes() {
        for (_, t) in &node.params {
            match t {
                StoredTensor::F32(t) => f += 4 * t.len(),
                StoredTensor::I8(t) => q += t.codes().len(),
            }
        }
    }
    (f, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_range_qparams() {
        let t = Tensor::new([3], vec![0.0f32, 0.5, 1.0]).unwrap();
        let q = compute_qparams(&t).unwrap();
        assert!((q.scale - 1.0 / 255.0).abs() < 1e-9);
        assert_eq!(q.zero_point, 0);
    }

    #[test]
    fn symmetric_range_rounds_half_away() {
        let t = Tensor::new([2], vec![-1.0f32, 1.0]).unwrap();
        let q = compute_qparams(&t).unwrap();
        assert!((q.scale - 2.0 / 255.0).abs() < 1e-9);
        assert_eq!(q.zero_point, 128);
    }

    #[test]
    fn all_zero_roundtrips_exactly() {
        let t = Tensor::<f32>::zeros([4]);
        let q = compute_qparams(&t).unwrap();
        assert_eq!(q, QParams { scale: 1.0, zero_point: 0 });
        assert_eq!(quantize_tensor(&t, q).dequantize(), t);
    }

    #[test]
    fn non_finite_rejected() {
        let t = Tensor::new([2], vec![0.0f32, f32::NAN]).unwrap();
        assert_eq!(compute_qparams(&t), Err(QuantError::NonFinite(1)));
    }

    #[test]
    fn range_endpoints_hit_code_extremes() {
        let t = Tensor::new([3], vec![-0.6f32, 0.1, 2.3]).unwrap();
        let q = compute_qparams(&t).unwrap();
        let codes = quantize_tensor(&t, q);
        assert_eq!(codes.codes()[0], 0);
        assert_eq!(codes.codes()[2], 255);
    }

    #[test]
    fn random_tensor_roundtrip_bound() {
        let t = Tensor::from_fn([1000], |i| ((i as f32 * 0.37).sin() * 2.0 - 0.4).clamp(-1.0, 1.0));
        let q = compute_qparams(&t).unwrap();
        let back = quantize_tensor(&t, q).dequantize();
        for (a, b) in t.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= q.scale / 2.0 + 1e-7, "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn roundtrip_error_within_half_step(v in proptest::collection::vec(-5.0f32..5.0, 1..64)) {
            let t = Tensor::new([v.len()], v).unwrap();
            let q = compute_qparams(&t).unwrap();
            let back = quantize_tensor(&t, q).dequantize();
            for (a, b) in t.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= q.scale / 2.0 + 1e-6, "{a} vs {b} scale {}", q.scale);
            }
        }

        #[test]
        fn requantization_is_idempotent(v in proptest::collection::vec(-3.0f32..3.0, 1..64)) {
            let t = Tensor::new([v.len()], v).unwrap();
            let q = compute_qparams(&t).unwrap();
            let once = quantize_tensor(&t, q);
            let twice = quantize_tensor(&once.dequantize(), q);
            prop_assert_eq!(once, twice);
        }
    }
}
