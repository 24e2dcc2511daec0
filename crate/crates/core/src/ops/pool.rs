use serde::{Deserialize, Serialize};

use super::conv::out_size;
use crate::tensor::{dim_err, param_err, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Max,
    Avg,
}

/// Max or average pooling without padding.
pub fn pool2d<T: Real>(input: &Tensor<T>, mode: PoolMode, window: usize, stride: usize) -> Result<Tensor<T>> {
    pool2d_padded(input, mode, window, stride, 0).map(|(y, _)| y)
}

/// Pooling with `padding` cells of implicit border that never contribute:
/// max ignores them and avg divides by the count of real cells only.
///
/// For max mode the second value holds the flat input index selected for
/// each output element, used by the backward pass.
pub fn pool2d_padded<T: Real>(
    input: &Tensor<T>,
    mode: PoolMode,
    window: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = input.dims4("pool2d")?;
    if stride == 0 || window == 0 {
        return Err(param_err("pool2d", "window and stride must be >= 1"));
    }
    if padding >= window {
        return Err(param_err("pool2d", "padding must be smaller than the window"));
    }
    let oh = out_size(h, window, stride, padding)
        .ok_or_else(|| dim_err("pool2d", "height", format!("window {window} larger than input height {h}")))?;
    let ow = out_size(w, window, stride, padding)
        .ok_or_else(|| dim_err("pool2d", "width", format!("window {window} larger than input width {w}")))?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::new();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let y0 = (oy * stride) as isize - padding as isize;
            let (ys, ye) = (y0.max(0) as usize, ((y0 + window as isize) as usize).min(h));
            for ox in 0..ow {
                let x0 = (ox * stride) as isize - padding as isize;
                let (xs, xe) = (x0.max(0) as usize, ((x0 + window as isize) as usize).min(w));
                match mode {
                    PoolMode::Max => {
                        let mut best = base + ys * w + xs;
                        for iy in ys..ye {
                            for ix in xs..xe {
                                let i = base + iy * w + ix;
                                if x[i] > x[best] {
                                    best = i;
                                }
                            }
                        }
                        out.push(x[best]);
                        argmax.push(best);
                    }
                    PoolMode::Avg => {
                        let mut acc = T::zero();
                        for iy in ys..ye {
                            for ix in xs..xe {
                                acc = acc + x[base + iy * w + ix];
                            }
                        }
                        let count = ((ye - ys) * (xe - xs)) as f64;
                        out.push(acc / T::lit(count));
                    }
                }
            }
        }
    }
    Ok((Tensor::new([n, c, oh, ow], out)?, argmax))
}

pub fn pool2d_backward<T: Real>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    mode: PoolMode,
    window: usize,
    stride: usize,
    padding: usize,
    argmax: &[usize],
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("pool2d_backward")?;
    let [_, _, oh, ow] = grad_out.dims4("pool2d_backward")?;
    let dy = grad_out.data();
    let mut dx = vec![T::zero(); input.len()];
    match mode {
        PoolMode::Max => {
            if argmax.len() != dy.len() {
                return Err(crate::tensor::TensorError::State(
                    "max-pool backward needs the argmax cache from its forward pass".into(),
                ));
            }
            for (&i, &g) in argmax.iter().zip(dy) {
                dx[i] = dx[i] + g;
            }
        }
        PoolMode::Avg => {
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    let y0 = (oy * stride) as isize - padding as isize;
                    let (ys, ye) = (y0.max(0) as usize, ((y0 + window as isize) as usize).min(h));
                    for ox in 0..ow {
                        let x0 = (ox * stride) as isize - padding as isize;
                        let (xs, xe) = (x0.max(0) as usize, ((x0 + window as isize) as usize).min(w));
                        let g = dy[(plane * oh + oy) * ow + ox] / T::lit(((ye - ys) * (xe - xs)) as f64);
                        for iy in ys..ye {
                            for ix in xs..xe {
                                dx[base + iy * w + ix] = dx[base + iy * w + ix] + g;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input.shape().to_vec(), dx)
}

/// Mean over H×W for each (sample, channel); output (N,C,1,1).
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("global_avg_pool")?;
    let plane = h * w;
    let out = input
        .data()
        .chunks_exact(plane)
        .map(|p| p.iter().copied().sum::<T>() / T::lit(plane as f64))
        .collect();
    Tensor::new([n, c, 1, 1], out)
}

pub fn global_avg_pool_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let plane: usize = input_shape[2..].iter().product();
    let scale = T::lit(plane as f64);
    let mut dx = Vec::with_capacity(plane * grad_out.len());
    for &g in grad_out.data() {
        dx.extend(std::iter::repeat_n(g / scale, plane));
    }
    Tensor::new(input_shape.to_vec(), dx)
}
