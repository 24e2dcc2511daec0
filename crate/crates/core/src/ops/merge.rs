use serde::{Deserialize, Serialize};

use crate::tensor::{dim_err, param_err, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    ConcatChannels,
    Add,
}

pub fn merge<T: Real>(inputs: &[&Tensor<T>], mode: MergeMode) -> Result<Tensor<T>> {
    let first = *inputs.first().ok_or_else(|| param_err("merge", "no inputs"))?;
    match mode {
        MergeMode::Add => {
            let mut out = first.clone();
            for t in &inputs[1..] {
                if t.shape() != first.shape() {
                    return Err(dim_err(
                        "merge(add)",
                        "shape",
                        format!("{:?} vs {:?}", first.shape(), t.shape()),
                    ));
                }
                out.add_assign(t);
            }
            Ok(out)
        }
        MergeMode::ConcatChannels => {
            let s0 = first.shape();
            if s0.len() < 2 {
                return Err(dim_err("merge(concat)", "rank", format!("{s0:?}")));
            }
            let mut channels = 0;
            for t in inputs {
                let s = t.shape();
                if s.len() != s0.len() || s[0] != s0[0] || s[2..] != s0[2..] {
                    return Err(dim_err(
                        "merge(concat)",
                        "non-channel dims",
                        format!("{s0:?} vs {s:?}"),
                    ));
                }
                channels += s[1];
            }
            let n = s0[0];
            let inner: usize = s0[2..].iter().product();
            let mut data = Vec::with_capacity(n * channels * inner);
            for ni in 0..n {
                for t in inputs {
                    let block = t.shape()[1] * inner;
                    data.extend_from_slice(&t.data()[ni * block..(ni + 1) * block]);
                }
            }
            let mut shape = s0.to_vec();
            shape[1] = channels;
            Tensor::new(shape, data)
        }
    }
}

/// Splits the output gradient back onto each input.
pub fn merge_backward<T: Real>(input_shapes: &[&[usize]], grad_out: &Tensor<T>, mode: MergeMode) -> Result<Vec<Tensor<T>>> {
    match mode {
        MergeMode::Add => Ok(input_shapes.iter().map(|_| grad_out.clone()).collect()),
        MergeMode::ConcatChannels => {
            let s = grad_out.shape();
            let n = s[0];
            let inner: usize = s[2..].iter().product();
            let total = s[1] * inner;
            let mut offset = 0;
            let mut grads = Vec::with_capacity(input_shapes.len());
            for shape in input_shapes {
                let block = shape[1] * inner;
                let mut data = Vec::with_capacity(n * block);
                for ni in 0..n {
                    let start = ni * total + offset;
                    data.extend_from_slice(&grad_out.data()[start..start + block]);
                }
                grads.push(Tensor::new(shape.to_vec(), data)?);
                offset += block;
            }
            Ok(grads)
        }
    }
}
