use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::serialize_model;
use crate::error::Error;
use crate::model::CellModel;
use crate::tensor::Tensor;
use crate::trainer::{evaluate_metrics, Samples};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub dtype: String,
    pub size_bytes: u64,
    pub latency_ms_mean: f64,
    pub latency_ms_std: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Serialized size, single-image latency (one warmup, then `repetitions`
/// timed forwards) and validation metrics.
pub fn benchmark_model(m: &CellModel, samples: &Samples, repetitions: usize) -> Result<BenchReport, Error> {
    if repetitions < 3 {
        return Err(Error::Invalid(format!("benchmark needs at least 3 repetitions, got {repetitions}")));
    }
    let size_bytes = serialize_model(m).len() as u64;
    let (w, h) = m.preprocess.target_size;
    let probe = samples
        .inputs
        .first()
        .cloned()
        .unwrap_or_else(|| Tensor::full([1, m.graph.input_channels(), h as usize, w as usize], 0.5));
    m.graph.forward(&probe)?;
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        std::hint::black_box(m.graph.forward(std::hint::black_box(&probe))?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (times.len() - 1) as f64;
    let metrics = evaluate_metrics(&m.graph, samples, 0.5)?;
    Ok(BenchReport {
        model: m.arch.clone(),
        dtype: if m.graph.is_quantized() { "int8" } else { "float32" }.to_string(),
        size_bytes,
        latency_ms_mean: mean,
        latency_ms_std: var.sqrt(),
        accuracy: metrics.accuracy,
        precision: metrics.precision,
        recall: metrics.recall,
    })
}

pub fn write_report_csv(reports: &[BenchReport], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
