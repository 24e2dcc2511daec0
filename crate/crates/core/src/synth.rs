//! Synthetic stand-ins for blood-smear data: single-cell crops shaped like
//! the public malaria cell dataset, and whole-smear composites with pasted
//! parasitized cells at known positions.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{GraphBuilder, LayerGraph, LayerKind, NodeRef, Slot};
use crate::imgproc::{build_input_tensor, resize_bilinear, Image, PreprocessConfig};
use crate::localizer::{build_pyramid, map_to_original, window_positions, BoxPx, LocalizeConfig};
use crate::error::Error;
use crate::model::{CellModel, Label, DECISION_THRESHOLD};
use crate::ops::norm::{BN_EPSILON, BN_MOMENTUM};
use crate::ops::{ActivationMode, PoolMode};
use crate::tensor::Tensor;
use crate::trainer::{evaluate_metrics, train, EpochRecord, Metrics, Samples, TrainConfig};

pub const SMEAR_BACKGROUND: [u8; 3] = [236, 222, 226];
const CELL_COLOR: [u8; 3] = [214, 150, 168];
const PARASITE_COLOR: [u8; 3] = [88, 36, 118];
const STAIN_COLOR: [u8; 3] = [196, 128, 150];
pub const PATCH: u32 = 75;
/// Minimum Chebyshev gap between pasted positive patches.
pub const MIN_GAP: u32 = 96;

fn blend(dst: &mut Image, x: i64, y: i64, color: [u8; 3], a: f64) {
    if x < 0 || y < 0 || x >= dst.width() as i64 || y >= dst.height() as i64 || a <= 0.0 {
        return;
    }
    let (x, y) = (x as u32, y as u32);
    for c in 0..3u8 {
        let v = dst.get(x, y, c) as f64 * (1.0 - a) + color[c as usize] as f64 * a;
        dst.set(x, y, c, v.round().clamp(0.0, 255.0) as u8);
    }
}

/// Filled ellipse with a one-pixel anti-aliased rim.
fn ellipse(dst: &mut Image, cx: f64, cy: f64, rx: f64, ry: f64, color: [u8; 3], opacity: f64) {
    let (x0, x1) = ((cx - rx - 2.0).floor() as i64, (cx + rx + 2.0).ceil() as i64);
    let (y0, y1) = ((cy - ry - 2.0).floor() as i64, (cy + ry + 2.0).ceil() as i64);
    let r = rx.min(ry);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
            let d = ((dx * dx + dy * dy).sqrt() - 1.0) * r;
            blend(dst, x, y, color, (0.5 - d).clamp(0.0, 1.0) * opacity);
        }
    }
}

fn add_noise(img: &mut Image, rng: &mut impl Rng, amplitude: i32) {
    for v in img.pixels_mut() {
        *v = (*v as i32 + rng.gen_range(-amplitude..=amplitude)).clamp(0, 255) as u8;
    }
}

/// Draws one red blood cell centred at (cx, cy), optionally with parasites.
fn draw_cell(img: &mut Image, rng: &mut impl Rng, cx: f64, cy: f64, r: f64, infected: bool) {
    let squash = rng.gen_range(0.88..1.0);
    ellipse(img, cx, cy, r, r * squash, CELL_COLOR, 1.0);
    ellipse(img, cx, cy, r * 0.45, r * 0.45 * squash, [226, 170, 186], 0.5);
    for _ in 0..rng.gen_range(0..3) {
        let (a, d) = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..r * 0.6));
        let s = rng.gen_range(2.0..4.0);
        ellipse(img, cx + a.cos() * d, cy + a.sin() * d, s, s, STAIN_COLOR, 0.6);
    }
    if infected {
        for _ in 0..rng.gen_range(1..=2) {
            let (a, d) = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..r * 0.45));
            let s = rng.gen_range(4.0..7.0);
            let (px, py) = (cx + a.cos() * d, cy + a.sin() * d);
            ellipse(img, px, py, s, s * rng.gen_range(0.7..1.0), PARASITE_COLOR, 0.95);
            ellipse(img, px, py, s * 0.45, s * 0.45, [150, 90, 170], 0.7);
        }
    }
}

/// A single segmented cell on black, sized like the public dataset's crops.
pub fn cell_image(rng: &mut impl Rng, infected: bool) -> Image {
    let size = rng.gen_range(90..=140u32);
    let mut img = Image::filled(size, size, [0, 0, 0]);
    let s = size as f64;
    let r = s * rng.gen_range(0.36..0.44);
    let jitter = s * 0.04;
    let cx = s / 2.0 + rng.gen_range(-jitter..jitter);
    let cy = s / 2.0 + rng.gen_range(-jitter..jitter);
    draw_cell(&mut img, rng, cx, cy, r, infected);
    add_noise(&mut img, rng, 6);
    img
}

/// `n_per_class` parasitized then `n_per_class` uninfected cell images.
pub fn cell_dataset(n_per_class: usize, seed: u64) -> Vec<(Image, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * n_per_class);
    for label in [Label::Parasitized, Label::Uninfected] {
        for _ in 0..n_per_class {
            out.push((cell_image(&mut rng, label == Label::Parasitized), label));
        }
    }
    out
}

/// Writes a `Parasitized/` + `Uninfected/` PNG tree like the public dataset.
pub fn write_cell_folders(root: impl AsRef<Path>, n_per_class: usize, seed: u64) -> std::io::Result<()> {
    let root = root.as_ref();
    for (i, (img, label)) in cell_dataset(n_per_class, seed).into_iter().enumerate() {
        let dir = root.join(match label {
            Label::Parasitized => "Parasitized",
            Label::Uninfected => "Uninfected",
        });
        fs::create_dir_all(&dir)?;
        img.save_png(dir.join(format!("cell_{i:05}.png")))
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Composite {
    pub image: Image,
    /// Ground-truth boxes of the pasted parasitized patches.
    pub boxes: Vec<BoxPx>,
}

pub const COMPOSITE_SIZE: (u32, u32) = (424, 256);

fn chebyshev_gap(a: &BoxPx, b: &BoxPx) -> u32 {
    let gx = (a.x.max(b.x)).saturating_sub((a.x + a.w).min(b.x + b.w));
    let gy = (a.y.max(b.y)).saturating_sub((a.y + a.h).min(b.y + b.h));
    gx.max(gy)
}

fn place_patches(rng: &mut impl Rng, n: usize, width: u32, height: u32) -> Vec<BoxPx> {
    'restart: loop {
        let mut boxes: Vec<BoxPx> = Vec::new();
        for _ in 0..n {
            let mut placed = false;
            for _ in 0..400 {
                let b = BoxPx::new(rng.gen_range(0..=width - PATCH), rng.gen_range(0..=height - PATCH), PATCH, PATCH);
                if boxes.iter().all(|o| chebyshev_gap(o, &b) >= MIN_GAP) {
                    boxes.push(b);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'restart;
            }
        }
        return boxes;
    }
}

/// Smear background with scattered uninfected cells and `positives`
/// parasitized patches, non-overlapping and at least [`MIN_GAP`] px apart.
pub fn composite(rng: &mut impl Rng, positives: usize, width: u32, height: u32) -> Composite {
    let boxes = place_patches(rng, positives, width, height);
    let mut img = Image::filled(width, height, SMEAR_BACKGROUND);
    let mut occupied: Vec<(f64, f64, f64)> = Vec::new();
    for b in &boxes {
        let (cx, cy) = (
            b.x as f64 + PATCH as f64 / 2.0 + rng.gen_range(-3.0..3.0),
            b.y as f64 + PATCH as f64 / 2.0 + rng.gen_range(-3.0..3.0),
        );
        let r = rng.gen_range(27.0..32.0);
        draw_cell(&mut img, rng, cx, cy, r, true);
        occupied.push((cx, cy, r + 12.0));
    }
    let area = width as f64 * height as f64;
    let wanted = (area / 9000.0).round() as usize;
    let mut tries = 0;
    let mut drawn = 0;
    while drawn < wanted && tries < wanted * 50 {
        tries += 1;
        let r = rng.gen_range(24.0..31.0);
        let (cx, cy) = (rng.gen_range(0.0..width as f64), rng.gen_range(0.0..height as f64));
        if occupied.iter().any(|&(ox, oy, or)| ((cx - ox).powi(2) + (cy - oy).powi(2)).sqrt() < r + or) {
            continue;
        }
        draw_cell(&mut img, rng, cx, cy, r, false);
        occupied.push((cx, cy, r));
        drawn += 1;
    }
    add_noise(&mut img, rng, 5);
    Composite { image: img, boxes }
}

/// Composites with 1–5 positives each, reproducible per seed.
pub fn composite_suite(n: usize, seed: u64) -> Vec<Composite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = rng.gen_range(1..=5);
            composite(&mut rng, k, COMPOSITE_SIZE.0, COMPOSITE_SIZE.1)
        })
        .collect()
}

/// Preprocessing used by the window classifier: plain RGB.
pub fn window_preprocess() -> PreprocessConfig {
    PreprocessConfig::with_mode(crate::imgproc::InputMode::Rgb)
}

/// Labels every pyramid window of each composite by its best IoU with the
/// ground truth (positive ≥ `pos_iou`, negative < `neg_iou`, ambiguous
/// windows dropped) and keeps all positives plus up to `neg_per_pos`
/// negatives per positive, hard negatives (partial overlap) first.
pub fn window_training_set(
    composites: &[Composite],
    preprocess: &PreprocessConfig,
    config: &LocalizeConfig,
    pos_iou: f64,
    neg_iou: f64,
    neg_per_pos: usize,
    seed: u64,
) -> crate::localizer::Result<Samples> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positives = Vec::new();
    let mut hard = Vec::new();
    let mut easy = Vec::new();
    let mut pyramids = Vec::with_capacity(composites.len());
    for (ci, c) in composites.iter().enumerate() {
        let levels = build_pyramid(&c.image, config.pyramid_scale, config.min_size)?;
        for (level, img) in levels.iter().enumerate() {
            for (x, y) in window_positions(img.width(), img.height(), config.window, config.stride)? {
                let b = map_to_original(
                    BoxPx::new(x, y, config.window, config.window),
                    level,
                    config.pyramid_scale,
                    c.image.width(),
                    c.image.height(),
                );
                let best = c.boxes.iter().map(|g| g.iou(&b)).fold(0.0, f64::max);
                let crop = (ci, level, x, y);
                if best >= pos_iou {
                    positives.push(crop);
                } else if best < neg_iou {
                    if best > 0.0 {
                        hard.push(crop);
                    } else {
                        easy.push(crop);
                    }
                }
            }
        }
        pyramids.push(levels);
    }
    hard.shuffle(&mut rng);
    easy.shuffle(&mut rng);
    let budget = positives.len() * neg_per_pos;
    let n_hard = hard.len().min(budget / 2);
    let negatives: Vec<_> = hard[..n_hard].iter().chain(easy.iter().take(budget - n_hard)).copied().collect();

    let mut s = Samples::default();
    for (set, label) in [(&positives, Label::Parasitized), (&negatives, Label::Uninfected)] {
        for &(ci, level, x, y) in set {
            let img = &pyramids[ci][level];
            s.push(build_input_tensor(&img.crop(x, y, config.window, config.window), preprocess)?, label);
        }
    }
    Ok(s)
}

fn he(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<f32> {
    let limit = (6.0 / fan_in as f64).sqrt() as f32;
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-limit..limit))
}

/// Small window classifier whose head flattens the final feature map, so
/// the score depends on where in the window a cell sits.
pub fn window_classifier(input_channels: usize, seed: u64) -> LayerGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new(input_channels);
    let mut node = NodeRef::Input;
    let mut cin = input_channels;
    for (i, (cout, stride)) in [(8usize, 2usize), (16, 1), (16, 1)].into_iter().enumerate() {
        let w = he(&mut rng, &[cout, cin, 3, 3], cin * 9);
        let c = b.add(format!("c{i}.conv"), LayerKind::Conv2d { stride, padding: 1 }, vec![node], vec![(Slot::Weight, w)]);
        let n = b.add(
            format!("c{i}.bn"),
            LayerKind::BatchNorm {
                epsilon: BN_EPSILON,
                momentum: BN_MOMENTUM,
            },
            vec![c],
            vec![
                (Slot::Gamma, Tensor::full([cout], 1.0)),
                (Slot::Beta, Tensor::zeros([cout])),
                (Slot::RunningMean, Tensor::zeros([cout])),
                (Slot::RunningVar, Tensor::full([cout], 1.0)),
            ],
        );
        let r = b.add(format!("c{i}.relu"), LayerKind::Activation(ActivationMode::Relu), vec![n], vec![]);
        node = b.add(
            format!("c{i}.pool"),
            LayerKind::Pool2d {
                mode: PoolMode::Max,
                window: 2,
                stride: 2,
                padding: 0,
            },
            vec![r],
            vec![],
        );
        cin = cout;
    }
    // 75 → 38 → 19 → 9 → 4
    let features = cin * 4 * 4;
    let w = he(&mut rng, &[features, 1], features);
    let fc = b.add(
        "fc",
        LayerKind::Dense,
        vec![node],
        vec![(Slot::Weight, w), (Slot::Bias, Tensor::zeros([1]))],
    );
    let p = b.add("prob", LayerKind::Activation(ActivationMode::Sigmoid), vec![fc], vec![]);
    b.finish(p).expect("window classifier is well formed")
}

/// IoU bands used to label windows for [`train_window_model`]. Windows one
/// stride off-centre stay positive; diagonal offsets fall below the
/// negative band so neighbouring duplicates are not rewarded.
pub const WINDOW_POS_IOU: f64 = 0.6;
pub const WINDOW_NEG_IOU: f64 = 0.45;

#[derive(Debug, Clone)]
pub struct WindowTraining {
    pub model: CellModel,
    pub validation: Metrics,
    pub history: Vec<EpochRecord>,
    pub train_items: usize,
    pub val_items: usize,
}

/// Trains the toy window classifier on `n_composites` generated smears.
pub fn train_window_model(n_composites: usize, seed: u64) -> Result<WindowTraining, Error> {
    let preprocess = window_preprocess();
    let config = LocalizeConfig::default();
    let composites = composite_suite(n_composites, seed);
    let samples = window_training_set(&composites, &preprocess, &config, WINDOW_POS_IOU, WINDOW_NEG_IOU, 4, seed)?;
    let (train_set, val_set) = samples.split(0.85, seed)?;
    let train_config = TrainConfig {
        epochs: 10,
        learning_rate: 1e-3,
        early_stop_val_acc: 1.01,
        seed,
        ..TrainConfig::default()
    };
    let outcome = train(window_classifier(3, seed), &train_set, &val_set, &train_config, |_| {})?;
    let validation = evaluate_metrics(&outcome.graph, &val_set, DECISION_THRESHOLD)?;
    Ok(WindowTraining {
        model: CellModel::new("window", preprocess, outcome.graph),
        validation,
        history: outcome.history,
        train_items: train_set.len(),
        val_items: val_set.len(),
    })
}

/// Downscales a composite by `factor`, keeping ground-truth boxes aligned.
pub fn rescale(c: &Composite, factor: f64) -> crate::imgproc::Result<Composite> {
    let w = (c.image.width() as f64 * factor).round() as u32;
    let h = (c.image.height() as f64 * factor).round() as u32;
    Ok(Composite {
        image: resize_bilinear(&c.image, w, h)?,
        boxes: c
            .boxes
            .iter()
            .map(|b| {
                BoxPx::new(
                    (b.x as f64 * factor).round() as u32,
                    (b.y as f64 * factor).round() as u32,
                    (b.w as f64 * factor).round() as u32,
                    (b.h as f64 * factor).round() as u32,
                )
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composites_respect_spacing() {
        for c in composite_suite(10, 4) {
            assert!((1..=5).contains(&c.boxes.len()));
            for (i, a) in c.boxes.iter().enumerate() {
                assert!(a.x + a.w <= c.image.width() && a.y + a.h <= c.image.height());
                for b in &c.boxes[i + 1..] {
                    assert!(chebyshev_gap(a, b) >= MIN_GAP);
                }
            }
        }
    }

    #[test]
    fn datasets_are_seeded() {
        let a = cell_dataset(2, 1);
        let b = cell_dataset(2, 1);
        assert_eq!(a.len(), 4);
        assert!(a.iter().zip(&b).all(|(x, y)| x.0 == y.0 && x.1 == y.1));
    }

    #[test]
    fn window_classifier_outputs_probability() {
        let g = window_classifier(3, 0);
        let y = g.forward(&Tensor::full([2, 3, 75, 75], 0.5)).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
    }
}
