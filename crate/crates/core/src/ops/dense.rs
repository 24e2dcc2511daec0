use crate::tensor::{dim_err, Real, Result, Tensor};

fn flat_dims<T: Real>(op: &'static str, input: &Tensor<T>) -> Result<(usize, usize)> {
    match input.shape() {
        [n, rest @ ..] if !rest.is_empty() => Ok((*n, rest.iter().product())),
        s => Err(dim_err(op, "rank", format!("expected (N, F...), got {s:?}"))),
    }
}

/// `input · weights + bias` with input (N,F) and weights (F,O).
///
/// Inputs of higher rank are flattened to (N, F) first, so a (N,C,1,1)
/// global-pool output feeds straight in.
pub fn dense<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f) = flat_dims("dense", input)?;
    let (wf, o) = match weights.shape() {
        [a, b] => (*a, *b),
        s => return Err(dim_err("dense", "weights", format!("expected (F,O), got {s:?}"))),
    };
    if wf != f {
        return Err(dim_err("dense", "features", format!("input has {f} features, weights expect {wf}")));
    }
    if bias.shape() != [o] {
        return Err(dim_err("dense", "bias", format!("expected [{o}], got {:?}", bias.shape())));
    }
    let x = input.data();
    let w = weights.data();
    let mut out = Vec::with_capacity(n * o);
    for row in x.chunks_exact(f) {
        let mut acc = bias.data().to_vec();
        for (fi, &xv) in row.iter().enumerate() {
            for (a, &wv) in acc.iter_mut().zip(&w[fi * o..(fi + 1) * o]) {
                *a = *a + xv * wv;
            }
        }
        out.extend(acc);
    }
    Tensor::new([n, o], out)
}

pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, grad_out: &Tensor<T>) -> Result<DenseGrads<T>> {
    let (n, f) = flat_dims("dense_backward", input)?;
    let o = weights.shape()[1];
    if grad_out.shape() != [n, o] {
        return Err(dim_err("dense_backward", "grad_out", format!("{:?}", grad_out.shape())));
    }
    let x = input.data();
    let w = weights.data();
    let dy = grad_out.data();
    let mut dw = vec![T::zero(); f * o];
    let mut db = vec![T::zero(); o];
    let mut dx = vec![T::zero(); n * f];
    for ni in 0..n {
        let dyr = &dy[ni * o..(ni + 1) * o];
        for (b, &g) in db.iter_mut().zip(dyr) {
            *b = *b + g;
        }
        for fi in 0..f {
            let xv = x[ni * f + fi];
            let wrow = &w[fi * o..(fi + 1) * o];
            let mut acc = T::zero();
            for oi in 0..o {
                dw[fi * o + oi] = dw[fi * o + oi] + xv * dyr[oi];
                acc = acc + wrow[oi] * dyr[oi];
            }
            dx[ni * f + fi] = acc;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weights: Tensor::new(weights.shape().to_vec(), dw)?,
        bias: Tensor::new([o], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_row() {
        let x = Tensor::new([1, 2], vec![1.0f32, 2.0]).unwrap();
        let w = Tensor::new([2, 1], vec![1.0, 1.0]).unwrap();
        let b = Tensor::new([1], vec![0.5]).unwrap();
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[3.5]);
    }

    #[test]
    fn identity_weights() {
        let x = Tensor::new([2, 3], vec![1.0f32, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        let w = Tensor::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = dense(&x, &w, &Tensor::zeros([3])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let x = Tensor::<f32>::zeros([1, 3]);
        let w = Tensor::zeros([4, 2]);
        assert!(matches!(
            dense(&x, &w, &Tensor::zeros([2])),
            Err(crate::tensor::TensorError::Dimension { .. })
        ));
    }

    #[test]
    fn squared_error_gradient_matches_closed_form() {
        // loss = (x·w + b - y)^2  =>  dL/dw = 2 (ŷ - y) x
        let x = Tensor::new([1, 3], vec![0.5f64, -1.0, 2.0]).unwrap();
        let w = Tensor::new([3, 1], vec![0.2, 0.4, -0.1]).unwrap();
        let b = Tensor::new([1], vec![0.3]).unwrap();
        let target = 1.5;
        let y_hat = dense(&x, &w, &b).unwrap().data()[0];
        let g = Tensor::new([1, 1], vec![2.0 * (y_hat - target)]).unwrap();
        let grads = dense_backward(&x, &w, &g).unwrap();
        for (i, &xi) in x.data().iter().enumerate() {
            assert!((grads.weights.data()[i] - 2.0 * (y_hat - target) * xi).abs() < 1e-12);
        }
        assert!((grads.bias.data()[0] - 2.0 * (y_hat - target)).abs() < 1e-12);
    }
}
