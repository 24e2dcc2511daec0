//! Per-layer activation capture and Grad-CAM heatmaps rendered as overlays.

mod colormap;

use std::io::Write;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use colormap::COLORMAP;

use crate::graph::{LayerGraph, Mode};
use crate::imgproc::{Image, ImageError};
use crate::model::CellModel;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("unknown layer {name:?}")]
    UnknownLayer { name: String, available: Vec<String> },
    #[error("layer {0:?} is not a convolution layer")]
    NotConv(String),
    #[error("model has no convolution layer")]
    NoConvLayer,
    #[error("model does not end in a sigmoid over a single logit")]
    NoLogit,
    #[error("heatmap is {heat_w}x{heat_h} but the base image is {base_w}x{base_h}")]
    DimMismatch { heat_w: u32, heat_h: u32, base_w: u32, base_h: u32 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

pub type Result<T, E = ExplainError> = std::result::Result<T, E>;

/// Which side of the decision the heatmap explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSign {
    #[default]
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// Row-major values in [0, 1], `width × height`.
    pub values: Vec<f32>,
    pub width: u32,
    pub height: u32,
    pub source_layer: String,
    /// Coarse map after relu, before upsampling and normalization.
    pub raw: Vec<f32>,
    pub raw_width: u32,
    pub raw_height: u32,
}

impl Heatmap {
    /// Bilinear resample of the normalized values.
    pub fn resized(&self, width: u32, height: u32) -> Heatmap {
        Heatmap {
            values: upsample_bilinear(&self.values, self.width as usize, self.height as usize, width as usize, height as usize),
            width,
            height,
            ..self.clone()
        }
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[(y * self.width + x) as usize]
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        for row in self.values.chunks(self.width as usize) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Every node's forward output, keyed by layer name, in graph order.
pub fn layer_activations(graph: &LayerGraph, input: &Tensor<f32>) -> Result<IndexMap<String, Tensor<f32>>> {
    let trace = graph.forward_traced(input, Mode::Infer)?;
    Ok(graph
        .nodes()
        .iter()
        .zip(trace.outputs())
        .map(|(n, t)| (n.name.clone(), t.clone()))
        .collect())
}

/// Channel weights `w_k = mean(∂logit/∂A_k)` and the relu'd map `Σ w_k A_k`
/// for one (1, K, h, w) activation/gradient pair.
pub fn cam_map(activations: &Tensor<f32>, gradients: &Tensor<f32>) -> Result<(Vec<f64>, Vec<f32>)> {
    let [n, k, h, w] = activations.dims4("grad_cam")?;
    if gradients.shape() != activations.shape() || n != 1 {
        return Err(TensorError::Dimension {
            op: "grad_cam",
            axis: "gradients".into(),
            detail: format!("activations {:?}, gradients {:?}", activations.shape(), gradients.shape()),
        }
        .into());
    }
    let plane = h * w;
    let weights: Vec<f64> = gradients
        .data()
        .chunks(plane)
        .map(|g| g.iter().map(|&v| v as f64).sum::<f64>() / plane as f64)
        .collect();
    let mut map = vec![0.0f64; plane];
    for (c, a) in activations.data().chunks(plane).enumerate().take(k) {
        for (m, &v) in map.iter_mut().zip(a) {
            *m += weights[c] * v as f64;
        }
    }
    Ok((weights, map.into_iter().map(|v| v.max(0.0) as f32).collect()))
}

/// Half-pixel-centred bilinear resampling of a single-channel map.
pub fn upsample_bilinear(src: &[f32], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    let sample = |coord: f64, len: usize| {
        let c = (coord.max(0.0)).min((len - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, c - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let (y0, y1, fy) = sample((oy as f64 + 0.5) * h as f64 / out_h as f64 - 0.5, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = sample((ox as f64 + 0.5) * w as f64 / out_w as f64 - 0.5, w);
            let at = |x: usize, y: usize| src[y * w + x] as f64;
            let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
            let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}

fn normalize(values: &mut [f32]) {
    let max = values.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        for v in values {
            *v = (*v / max).clamp(0.0, 1.0);
        }
    }
}

pub fn resolve_layer(graph: &LayerGraph, layer: Option<&str>) -> Result<usize> {
    match layer {
        None => graph.last_conv_layer().ok_or(ExplainError::NoConvLayer),
        Some(name) => {
            let idx = graph.node_index(name).ok_or_else(|| ExplainError::UnknownLayer {
                name: name.to_string(),
                available: conv_layers(graph),
            })?;
            if graph.node(idx).kind.is_conv() {
                Ok(idx)
            } else {
                Err(ExplainError::NotConv(name.to_string()))
            }
        }
    }
}

/// Names of the layers Grad-CAM accepts as targets.
pub fn conv_layers(graph: &LayerGraph) -> Vec<String> {
    graph
        .nodes()
        .iter()
        .filter(|n| n.kind.is_conv())
        .map(|n| n.name.clone())
        .collect()
}

/// Grad-CAM over the target conv layer, upsampled to the input's spatial size.
/// The gradient is taken of the pre-sigmoid logit, negated for `Negative`.
pub fn grad_cam(graph: &LayerGraph, input: &Tensor<f32>, target_layer: &str, sign: ClassSign) -> Result<Heatmap> {
    let target = resolve_layer(graph, Some(target_layer))?;
    let logit = graph.logit_node().ok_or(ExplainError::NoLogit)?;
    let [_, _, in_h, in_w] = input.dims4("grad_cam")?;
    let trace = graph.forward_traced(input, Mode::Infer)?;
    let z = trace.output_of(logit);
    let s = match sign {
        ClassSign::Positive => 1.0,
        ClassSign::Negative => -1.0,
    };
    let seed = Tensor::full(z.shape().to_vec(), s);
    let grads = graph.backward(&trace, &[(logit, &seed)])?;
    let a = trace.output_of(target);
    let g = grads.activations[target]
        .clone()
        .unwrap_or_else(|| Tensor::zeros(a.shape().to_vec()));
    let (_, raw) = cam_map(a, &g)?;
    let [_, _, h, w] = a.dims4("grad_cam")?;
    let mut values = upsample_bilinear(&raw, w, h, in_w, in_h);
    normalize(&mut values);
    Ok(Heatmap {
        values,
        width: in_w as u32,
        height: in_h as u32,
        source_layer: target_layer.to_string(),
        raw,
        raw_width: w as u32,
        raw_height: h as u32,
    })
}

/// `(1 − α)·base + α·colormap(heat)`, rounded per channel.
pub fn render_overlay(heatmap: &Heatmap, base: &Image, alpha: f32) -> Result<Image> {
    if heatmap.width != base.width() || heatmap.height != base.height() {
        return Err(ExplainError::DimMismatch {
            heat_w: heatmap.width,
            heat_h: heatmap.height,
            base_w: base.width(),
            base_h: base.height(),
        });
    }
    let alpha = alpha.clamp(0.0, 1.0);
    let rgb = base.to_rgb();
    let mut px = Vec::with_capacity(rgb.pixels().len());
    for (p, &heat) in rgb.pixels().chunks_exact(3).zip(&heatmap.values) {
        let color = COLORMAP[(heat.clamp(0.0, 1.0) * 255.0).round() as usize];
        for c in 0..3 {
            px.push(((1.0 - alpha) * p[c] as f32 + alpha * color[c] as f32).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(Image::new(base.width(), base.height(), 3, px)?)
}

/// Grad-CAM for a raw image through the model's preprocessing, returned at
/// the image's own dimensions together with the overlay.
pub fn explain_image(model: &CellModel, image: &Image, layer: Option<&str>, alpha: f32) -> Result<(Heatmap, Image)> {
    let idx = resolve_layer(&model.graph, layer)?;
    let name = model.graph.node(idx).name.clone();
    let input = crate::imgproc::build_input_tensor(image, &model.preprocess)?;
    let heat = grad_cam(&model.graph, &input, &name, ClassSign::Positive)?.resized(image.width(), image.height());
    let overlay = render_overlay(&heat, image, alpha)?;
    Ok((heat, overlay))
}
