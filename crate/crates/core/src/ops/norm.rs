use crate::tensor::{dim_err, Real, Result, Tensor};

pub const BN_EPSILON: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Infer,
}

/// Per-channel parameters of a batch-norm layer.
pub struct BnParams<'a, T> {
    pub gamma: &'a Tensor<T>,
    pub beta: &'a Tensor<T>,
    pub running_mean: &'a Tensor<T>,
    pub running_var: &'a Tensor<T>,
}

/// What the backward pass and the running-stat update need from a forward call.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    pub mode: NormMode,
}

fn layout<T: Real>(op: &'static str, input: &Tensor<T>, p: &BnParams<'_, T>) -> Result<(usize, usize, usize)> {
    let s = input.shape();
    if s.len() < 2 {
        return Err(dim_err(op, "rank", format!("expected (N,C,...), got {s:?}")));
    }
    let (n, c) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    for (name, t) in [
        ("gamma", p.gamma),
        ("beta", p.beta),
        ("running_mean", p.running_mean),
        ("running_var", p.running_var),
    ] {
        if t.shape() != [c] {
            return Err(dim_err(op, "channels", format!("{name} has shape {:?}, input has {c} channels", t.shape())));
        }
    }
    Ok((n, c, inner))
}

pub fn batch_norm<T: Real>(
    input: &Tensor<T>,
    p: &BnParams<'_, T>,
    mode: NormMode,
    epsilon: T,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (n, c, inner) = layout("batch_norm", input, p)?;
    let x = input.data();
    let count = T::lit((n * inner) as f64);
    let (mean, var) = match mode {
        NormMode::Infer => (p.running_mean.data().to_vec(), p.running_var.data().to_vec()),
        NormMode::Train => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ci in 0..c {
                let mut s = T::zero();
                for ni in 0..n {
                    s = s + x[(ni * c + ci) * inner..(ni * c + ci + 1) * inner].iter().copied().sum::<T>();
                }
                let m = s / count;
                let mut v = T::zero();
                for ni in 0..n {
                    for &xv in &x[(ni * c + ci) * inner..(ni * c + ci + 1) * inner] {
                        v = v + (xv - m) * (xv - m);
                    }
                }
                mean[ci] = m;
                var[ci] = v / count;
            }
            (mean, var)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + epsilon).sqrt()).collect();
    let mut normalized = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    for ni in 0..n {
        for ci in 0..c {
            let (g, b) = (p.gamma.data()[ci], p.beta.data()[ci]);
            for &xv in &x[(ni * c + ci) * inner..(ni * c + ci + 1) * inner] {
                let xh = (xv - mean[ci]) * inv_std[ci];
                normalized.push(xh);
                out.push(g * xh + b);
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        BnCache {
            normalized: Tensor::new(shape, normalized)?,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            mode,
        },
    ))
}

pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batch_norm_backward<T: Real>(gamma: &Tensor<T>, cache: &BnCache<T>, grad_out: &Tensor<T>) -> Result<BnGrads<T>> {
    let s = grad_out.shape();
    let (n, c) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    let dy = grad_out.data();
    let xh = cache.normalized.data();
    let m = T::lit((n * inner) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ni in 0..n {
        for ci in 0..c {
            let r = (ni * c + ci) * inner..(ni * c + ci + 1) * inner;
            for (&g, &h) in dy[r.clone()].iter().zip(&xh[r]) {
                dgamma[ci] = dgamma[ci] + g * h;
                dbeta[ci] = dbeta[ci] + g;
            }
        }
    }
    let mut dx = Vec::with_capacity(dy.len());
    for ni in 0..n {
        for ci in 0..c {
            let r = (ni * c + ci) * inner..(ni * c + ci + 1) * inner;
            let k = gamma.data()[ci] * cache.inv_std[ci];
            for (&g, &h) in dy[r.clone()].iter().zip(&xh[r]) {
                dx.push(match cache.mode {
                    NormMode::Infer => k * g,
                    NormMode::Train => k / m * (m * g - dbeta[ci] - h * dgamma[ci]),
                });
            }
        }
    }
    Ok(BnGrads {
        input: Tensor::new(s.to_vec(), dx)?,
        gamma: Tensor::new([c], dgamma)?,
        beta: Tensor::new([c], dbeta)?,
    })
}

/// Exponential moving average of running statistics toward the batch ones.
pub fn update_running_stats(running_mean: &mut [f32], running_var: &mut [f32], cache: &BnCache<f32>, momentum: f32) {
    for (r, &b) in running_mean.iter_mut().zip(&cache.batch_mean) {
        *r = momentum * *r + (1.0 - momentum) * b;
    }
    for (r, &b) in running_var.iter_mut().zip(&cache.batch_var) {
        *r = momentum * *r + (1.0 - momentum) * b;
    }
}
