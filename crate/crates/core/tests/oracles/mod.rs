//! Independent reference implementations and small fixtures shared by the
//! integration tests and the acceptance run.
#![allow(dead_code)]

use plasmo_core::graph::{GraphBuilder, LayerGraph, LayerKind, NodeRef, Slot};
use plasmo_core::ops::{ActivationMode, MergeMode, PoolMode};
use plasmo_core::{CellModel, DType, Image, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    loop {
        let k = [1usize, 3, 5][rng.gen_range(0..3)];
        let case = Case {
            n: rng.gen_range(1..=2),
            c: rng.gen_range(1..=8),
            h: rng.gen_range(1..=16),
            w: rng.gen_range(1..=16),
            k,
            stride: rng.gen_range(1..=2),
            padding: rng.gen_range(0..=k / 2),
        };
        if case.h + 2 * case.padding >= k && case.w + 2 * case.padding >= k {
            return case;
        }
    }
}

pub fn rand_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

/// Direct nested-loop cross-correlation; `groups == c` gives depthwise.
pub fn naive_conv(x: &[f32], wt: &[f32], b: &[f32], case: &Case, o: usize, depthwise: bool) -> Vec<f32> {
    let Case { n, c, h, w, k, stride, padding } = *case;
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let cin_per = if depthwise { 1 } else { c };
    let mut out = vec![0.0f32; n * o * oh * ow];
    for ni in 0..n {
        for co in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co] as f64;
                    for ci in 0..cin_per {
                        let src_c = if depthwise { co } else { ci };
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((ni * c + src_c) * h + iy as usize) * w + ix as usize];
                                let wv = wt[((co * cin_per + ci) * k + ky) * k + kx];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out[((ni * o + co) * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

pub fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> Image {
    let px = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
    Image::new(w as u32, h as u32, 1, px).unwrap()
}

/// Textbook Canny on a single-channel image, written independently of the
/// crate: f64 Sobel with clamped borders, angle sectors by slope comparison,
/// suppression that keeps the first of two equal neighbours, flood fill.
pub fn reference_canny(img: &Image, low: f64, high: f64) -> Vec<u8> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let px = |x: i64, y: i64| img.get(x.clamp(0, w - 1) as u32, y.clamp(0, h - 1) as u32, 0) as f64;
    let idx = |x: i64, y: i64| (y * w + x) as usize;
    let n = (w * h) as usize;
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut mag = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
            let (mut sx, mut sy) = (0.0, 0.0);
            for j in 0..3 {
                for i in 0..3 {
                    let v = px(x + i as i64 - 1, y + j as i64 - 1);
                    sx += kx[j][i] * v;
                    sy += kx[i][j] * v;
                }
            }
            gx[idx(x, y)] = sx;
            gy[idx(x, y)] = sy;
            mag[idx(x, y)] = (sx * sx + sy * sy).sqrt();
        }
    }
    let t = (22.5f64).to_radians().tan();
    let mut thin = vec![0.0; n];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = idx(x, y);
            if mag[i] == 0.0 {
                continue;
            }
            let (a, b) = (gx[i], gy[i]);
            let (dx, dy) = if b.abs() <= t * a.abs() {
                (1, 0)
            } else if a.abs() <= t * b.abs() {
                (0, 1)
            } else if a * b > 0.0 {
                (1, 1)
            } else {
                (-1, 1)
            };
            let before = mag[idx(x - dx, y - dy)];
            let after = mag[idx(x + dx, y + dy)];
            if mag[i] > before && mag[i] >= after {
                thin[i] = mag[i];
            }
        }
    }
    let mut out = vec![0u8; n];
    fn grow(x: i64, y: i64, w: i64, h: i64, thin: &[f64], low: f64, out: &mut [u8]) {
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < w && ny < h {
                    let j = (ny * w + nx) as usize;
                    if out[j] == 0 && thin[j] >= low {
                        out[j] = 255;
                        grow(nx, ny, w, h, thin, low, out);
                    }
                }
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            if thin[idx(x, y)] >= high {
                out[idx(x, y)] = 255;
                grow(x, y, w, h, &thin, low, &mut out);
            }
        }
    }
    out
}

/// A bright bar whose upper half steps by 60 (Sobel magnitude 240, strong)
/// and lower half by 30 (magnitude 120, weak), plus a detached weak step.
pub fn two_segment_image() -> Image {
    gray(40, 30, |x, y| {
        if (12..20).contains(&x) && (3..14).contains(&y) {
            60
        } else if (12..20).contains(&x) && (14..26).contains(&y) {
            30
        } else if x >= 30 && (5..25).contains(&y) {
            30
        } else {
            0
        }
    })
}

/// File length computed from the format layout alone: 8-byte header,
/// 17-byte section entries, `key=value` metadata, node table, tensor records.
pub fn expected_file_size(m: &CellModel) -> usize {
    let p = &m.preprocess;
    let meta = format!(
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
    .len();
    let mut topo = 12;
    let mut tensors = 4;
    for node in m.graph.nodes() {
        let fields = match node.kind {
            LayerKind::Conv2d { .. } | LayerKind::DepthwiseConv2d { .. } => 4,
            LayerKind::Pool2d { .. } => 7,
            LayerKind::GlobalAvgPool | LayerKind::Dense => 0,
            LayerKind::BatchNorm { .. } => 8,
            LayerKind::Activation(_) | LayerKind::Merge(_) => 1,
        };
        topo += 2 + node.name.len() + 1 + fields + 1 + 4 * node.inputs.len() + 1 + node.params.len();
        for (slot, t) in &node.params {
            let name = format!("{}.{}", node.name, slot.name());
            let elems: usize = t.shape().iter().product();
            let payload = match t.dtype() {
                DType::F32 => 4 * elems,
                DType::I8 => 4 + 1 + elems,
            };
            tensors += 2 + name.len() + 1 + 1 + 4 * t.shape().len() + payload;
        }
    }
    8 + 3 * 17 + meta + topo + tensors
}

/// input → conv "feat" (k channels, 1×1 weights given) → GAP → dense → sigmoid.
pub fn gap_head(conv_w: Vec<f32>, dense_w: Vec<f32>, in_ch: usize) -> LayerGraph {
    let k = dense_w.len();
    let mut b = GraphBuilder::new(in_ch);
    let c = b.add(
        "feat",
        LayerKind::Conv2d { stride: 1, padding: 0 },
        vec![NodeRef::Input],
        vec![(Slot::Weight, Tensor::new([k, in_ch, 1, 1], conv_w).unwrap())],
    );
    let g = b.add("gap", LayerKind::GlobalAvgPool, vec![c], vec![]);
    let d = b.add(
        "fc",
        LayerKind::Dense,
        vec![g],
        vec![(Slot::Weight, Tensor::new([k, 1], dense_w).unwrap()), (Slot::Bias, Tensor::zeros([1]))],
    );
    let s = b.add("prob", LayerKind::Activation(ActivationMode::Sigmoid), vec![d], vec![]);
    b.finish(s).unwrap()
}

/// Every top-left corner on the stride grid where the window fits.
pub fn brute_force_windows(w: u32, h: u32, window: u32, stride: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if x % stride == 0 && y % stride == 0 && x + window <= w && y + window <= h {
                out.push((x, y));
            }
        }
    }
    out
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0f32..1.0))
}

pub fn bn_params(c: usize, rng: &mut ChaCha8Rng) -> Vec<(Slot, Tensor)> {
    vec![
        (Slot::Gamma, Tensor::from_fn([c], |_| rng.gen_range(0.5f32..1.5))),
        (Slot::Beta, rand_tensor(rng, &[c])),
        (Slot::RunningMean, Tensor::zeros([c])),
        (Slot::RunningVar, Tensor::full([c], 1.0)),
    ]
}

/// One graph per layer kind, each small enough to check exhaustively fast.
pub fn single_layer_graphs(seed: u64) -> Vec<(&'static str, LayerGraph, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut one = |name: &'static str, cin: usize, shape: Vec<usize>, kind: LayerKind, params: Vec<(Slot, Tensor)>| {
        let mut b = GraphBuilder::new(cin);
        let n = b.add(name, kind, vec![NodeRef::Input], params);
        out.push((name, b.finish(n).unwrap(), shape));
    };
    one(
        "conv2d",
        3,
        vec![2, 3, 7, 7],
        LayerKind::Conv2d { stride: 2, padding: 1 },
        vec![(Slot::Weight, rand_tensor(&mut rng, &[4, 3, 3, 3])), (Slot::Bias, rand_tensor(&mut rng, &[4]))],
    );
    one(
        "depthwise_conv2d",
        3,
        vec![2, 3, 6, 6],
        LayerKind::DepthwiseConv2d { stride: 1, padding: 1 },
        vec![(Slot::Weight, rand_tensor(&mut rng, &[3, 1, 3, 3])), (Slot::Bias, rand_tensor(&mut rng, &[3]))],
    );
    one(
        "max_pool",
        2,
        vec![2, 2, 6, 6],
        LayerKind::Pool2d {
            mode: PoolMode::Max,
            window: 3,
            stride: 1,
            padding: 1,
        },
        vec![],
    );
    one(
        "avg_pool",
        2,
        vec![2, 2, 6, 6],
        LayerKind::Pool2d {
            mode: PoolMode::Avg,
            window: 2,
            stride: 2,
            padding: 0,
        },
        vec![],
    );
    one("global_avg_pool", 3, vec![2, 3, 4, 5], LayerKind::GlobalAvgPool, vec![]);
    one(
        "dense",
        12,
        vec![3, 12, 1, 1],
        LayerKind::Dense,
        vec![(Slot::Weight, rand_tensor(&mut rng, &[12, 5])), (Slot::Bias, rand_tensor(&mut rng, &[5]))],
    );
    let bn = bn_params(3, &mut rng);
    one(
        "batch_norm",
        3,
        vec![4, 3, 3, 3],
        LayerKind::BatchNorm {
            epsilon: 1e-5,
            momentum: 0.9,
        },
        bn,
    );
    for (name, mode) in [
        ("relu", ActivationMode::Relu),
        ("sigmoid", ActivationMode::Sigmoid),
        ("softmax", ActivationMode::Softmax),
    ] {
        one(name, 3, vec![2, 3, 4, 4], LayerKind::Activation(mode), vec![]);
    }

    for (name, mode) in [("concat", MergeMode::ConcatChannels), ("add", MergeMode::Add)] {
        let mut b = GraphBuilder::new(2);
        let w1 = rand_tensor(&mut rng, &[2, 2, 1, 1]);
        let w2 = rand_tensor(&mut rng, &[2, 2, 3, 3]);
        let a = b.add("a", LayerKind::Conv2d { stride: 1, padding: 0 }, vec![NodeRef::Input], vec![(Slot::Weight, w1)]);
        let c = b.add("c", LayerKind::Conv2d { stride: 1, padding: 1 }, vec![NodeRef::Input], vec![(Slot::Weight, w2)]);
        let m = b.add(name, LayerKind::Merge(mode), vec![a, c, NodeRef::Input], vec![]);
        out.push((name, b.finish(m).unwrap(), vec![2, 2, 5, 5]));
    }
    out
}
