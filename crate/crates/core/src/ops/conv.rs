//! Standard and depthwise 2-D cross-correlation (no kernel flip), zero padding.

use crate::tensor::{dim_err, param_err, Real, Result, Tensor};

/// Output spatial size for a window sliding over `size` with zero padding.
pub fn out_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn new(op: &'static str, input: [usize; 4], kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Self> {
        let [n, c, h, w] = input;
        if stride == 0 {
            return Err(param_err(op, "stride must be >= 1"));
        }
        let oh = out_size(h, kh, stride, pad)
            .ok_or_else(|| dim_err(op, "height", format!("kernel {kh} exceeds padded height {}", h + 2 * pad)))?;
        let ow = out_size(w, kw, stride, pad)
            .ok_or_else(|| dim_err(op, "width", format!("kernel {kw} exceeds padded width {}", w + 2 * pad)))?;
        Ok(Self {
            n,
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input coordinate for output position `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < limit).then_some(i as usize)
    }
}

/// Unfolds one sample (C,H,W) into columns of shape (C*kh*kw, oh*ow).
fn im2col<T: Real>(x: &[T], g: &Geom, col: &mut [T]) {
    let plane = g.oh * g.ow;
    for ci in 0..g.c {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * plane;
                let dst = &mut col[row..row + plane];
                for oy in 0..g.oh {
                    let d = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    match g.src(oy, ky, g.h) {
                        None => d.fill(T::zero()),
                        Some(iy) => {
                            let xr = &xc[iy * g.w..(iy + 1) * g.w];
                            for (ox, v) in d.iter_mut().enumerate() {
                                *v = g.src(ox, kx, g.w).map_or(T::zero(), |ix| xr[ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Folds column gradients back onto the (C,H,W) input gradient, accumulating.
fn col2im<T: Real>(col: &[T], g: &Geom, dx: &mut [T]) {
    let plane = g.oh * g.ow;
    for ci in 0..g.c {
        let dxc = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * plane;
                let src = &col[row..row + plane];
                for oy in 0..g.oh {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for ox in 0..g.ow {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            dxc[iy * g.w + ix] = dxc[iy * g.w + ix] + src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom<T: Real>(
    op: &'static str,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<(Geom, usize)> {
    let dims = input.dims4(op)?;
    let [oc, wc, kh, kw] = weights.dims4(op)?;
    if wc != dims[1] {
        return Err(dim_err(
            op,
            "in_channels",
            format!("input has {} channels, weights expect {wc}", dims[1]),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [oc] {
            return Err(dim_err(op, "bias", format!("expected [{oc}], got {:?}", b.shape())));
        }
    }
    Ok((Geom::new(op, dims, kh, kw, stride, padding)?, oc))
}

/// Cross-correlation of `input` (N,C,H,W) with `weights` (O,C,kH,kW) plus bias.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (g, oc) = conv_geom("conv2d", input, weights, bias, stride, padding)?;
    let k = g.c * g.kh * g.kw;
    let plane = g.oh * g.ow;
    let mut out = vec![T::zero(); g.n * oc * plane];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * plane] };
    let w = weights.data();
    for ni in 0..g.n {
        let x = &input.data()[ni * g.c * g.h * g.w..(ni + 1) * g.c * g.h * g.w];
        let cols: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut col);
            &col
        };
        let o = &mut out[ni * oc * plane..(ni + 1) * oc * plane];
        for co in 0..oc {
            let orow = &mut o[co * plane..(co + 1) * plane];
            let b = bias.map_or(T::zero(), |b| b.data()[co]);
            orow.fill(b);
            let wrow = &w[co * k..(co + 1) * k];
            for (ki, &wv) in wrow.iter().enumerate() {
                if wv == T::zero() {
                    continue;
                }
                let crow = &cols[ki * plane..(ki + 1) * plane];
                for (ov, &cv) in orow.iter_mut().zip(crow) {
                    *ov = *ov + wv * cv;
                }
            }
        }
    }
    Tensor::new([g.n, oc, g.oh, g.ow], out)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    let (g, oc) = conv_geom("conv2d_backward", input, weights, None, stride, padding)?;
    if grad_out.shape() != [g.n, oc, g.oh, g.ow] {
        return Err(dim_err("conv2d_backward", "grad_out", format!("{:?}", grad_out.shape())));
    }
    let k = g.c * g.kh * g.kw;
    let plane = g.oh * g.ow;
    let w = weights.data();
    let mut dw = vec![T::zero(); oc * k];
    let mut db = vec![T::zero(); oc];
    let mut dx = vec![T::zero(); input.len()];
    let mut col = vec![T::zero(); k * plane];
    let mut dcol = vec![T::zero(); k * plane];
    for ni in 0..g.n {
        let x = &input.data()[ni * g.c * g.h * g.w..(ni + 1) * g.c * g.h * g.w];
        let dy = &grad_out.data()[ni * oc * plane..(ni + 1) * oc * plane];
        if g.is_pointwise() {
            col.copy_from_slice(x);
        } else {
            im2col(x, &g, &mut col);
        }
        dcol.fill(T::zero());
        for co in 0..oc {
            let dyr = &dy[co * plane..(co + 1) * plane];
            db[co] = db[co] + dyr.iter().copied().sum::<T>();
            let wrow = &w[co * k..(co + 1) * k];
            for ki in 0..k {
                let crow = &col[ki * plane..(ki + 1) * plane];
                let mut acc = T::zero();
                for (&a, &b) in dyr.iter().zip(crow) {
                    acc = acc + a * b;
                }
                dw[co * k + ki] = dw[co * k + ki] + acc;
                let wv = wrow[ki];
                if wv != T::zero() {
                    let drow = &mut dcol[ki * plane..(ki + 1) * plane];
                    for (d, &a) in drow.iter_mut().zip(dyr) {
                        *d = *d + wv * a;
                    }
                }
            }
        }
        let dxs = &mut dx[ni * g.c * g.h * g.w..(ni + 1) * g.c * g.h * g.w];
        if g.is_pointwise() {
            for (d, &v) in dxs.iter_mut().zip(&dcol) {
                *d = *d + v;
            }
        } else {
            col2im(&dcol, &g, dxs);
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weights: Tensor::new(weights.shape().to_vec(), dw)?,
        bias: Tensor::new([oc], db)?,
    })
}

fn depthwise_geom<T: Real>(
    op: &'static str,
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Geom> {
    let dims = input.dims4(op)?;
    let [kc, one, kh, kw] = kernels.dims4(op)?;
    if one != 1 {
        return Err(dim_err(op, "kernel axis 1", format!("depthwise kernels must be (C,1,kH,kW), got {:?}", kernels.shape())));
    }
    if kc != dims[1] {
        return Err(dim_err(op, "channels", format!("input has {} channels, kernels cover {kc}", dims[1])));
    }
    if let Some(b) = bias {
        if b.shape() != [kc] {
            return Err(dim_err(op, "bias", format!("expected [{kc}], got {:?}", b.shape())));
        }
    }
    Geom::new(op, dims, kh, kw, stride, padding)
}

/// Per-channel cross-correlation: output channel `i` sees only input channel `i`.
pub fn depthwise_conv2d<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = depthwise_geom("depthwise_conv2d", input, kernels, bias, stride, padding)?;
    let plane_in = g.h * g.w;
    let plane = g.oh * g.ow;
    let mut out = vec![T::zero(); g.n * g.c * plane];
    for ni in 0..g.n {
        for ci in 0..g.c {
            let x = &input.data()[(ni * g.c + ci) * plane_in..(ni * g.c + ci + 1) * plane_in];
            let k = &kernels.data()[ci * g.kh * g.kw..(ci + 1) * g.kh * g.kw];
            let o = &mut out[(ni * g.c + ci) * plane..(ni * g.c + ci + 1) * plane];
            o.fill(bias.map_or(T::zero(), |b| b.data()[ci]));
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let kv = k[ky * g.kw + kx];
                    for oy in 0..g.oh {
                        let Some(iy) = g.src(oy, ky, g.h) else { continue };
                        for ox in 0..g.ow {
                            if let Some(ix) = g.src(ox, kx, g.w) {
                                o[oy * g.ow + ox] = o[oy * g.ow + ox] + kv * x[iy * g.w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new([g.n, g.c, g.oh, g.ow], out)
}

pub fn depthwise_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    let g = depthwise_geom("depthwise_conv2d_backward", input, kernels, None, stride, padding)?;
    if grad_out.shape() != [g.n, g.c, g.oh, g.ow] {
        return Err(dim_err("depthwise_conv2d_backward", "grad_out", format!("{:?}", grad_out.shape())));
    }
    let plane_in = g.h * g.w;
    let plane = g.oh * g.ow;
    let mut dx = vec![T::zero(); input.len()];
    let mut dk = vec![T::zero(); kernels.len()];
    let mut db = vec![T::zero(); g.c];
    for ni in 0..g.n {
        for ci in 0..g.c {
            let base_in = (ni * g.c + ci) * plane_in;
            let x = &input.data()[base_in..base_in + plane_in];
            let dxc = &mut dx[base_in..base_in + plane_in];
            let k = &kernels.data()[ci * g.kh * g.kw..(ci + 1) * g.kh * g.kw];
            let dy = &grad_out.data()[(ni * g.c + ci) * plane..(ni * g.c + ci + 1) * plane];
            db[ci] = db[ci] + dy.iter().copied().sum::<T>();
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let kv = k[ky * g.kw + kx];
                    let mut acc = T::zero();
                    for oy in 0..g.oh {
                        let Some(iy) = g.src(oy, ky, g.h) else { continue };
                        for ox in 0..g.ow {
                            if let Some(ix) = g.src(ox, kx, g.w) {
                                let d = dy[oy * g.ow + ox];
                                acc = acc + d * x[iy * g.w + ix];
                                dxc[iy * g.w + ix] = dxc[iy * g.w + ix] + kv * d;
                            }
                        }
                    }
                    let idx = ci * g.kh * g.kw + ky * g.kw + kx;
                    dk[idx] = dk[idx] + acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weights: Tensor::new(kernels.shape().to_vec(), dk)?,
        bias: Tensor::new([g.c], db)?,
    })
}
