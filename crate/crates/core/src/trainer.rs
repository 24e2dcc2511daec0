//! Dataset handling, Adam optimization and evaluation metrics.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{LayerGraph, Mode, Slot};
use crate::imgproc::{build_input_tensor, load_image, Image, PreprocessConfig};
use crate::model::Label;
use crate::tensor::{dim_err, Tensor, TensorError};

pub const CLASS_DIRS: [(&str, Label); 2] = [("Parasitized", Label::Parasitized), ("Uninfected", Label::Uninfected)];
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("class folder {0} is missing")]
    MissingClass(PathBuf),
    #[error("class {0} has no items")]
    EmptyClass(Label),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("model does not end in a sigmoid over a single logit")]
    NoLogit,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetItem {
    pub path: PathBuf,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub items: Vec<DatasetItem>,
    /// Files that could not be read as images.
    pub skipped: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.items.iter().filter(|i| i.label == label).count()
    }

    /// Class-balanced sample of `n` items in path order; the whole set when
    /// `n` is at least its size.
    pub fn stratified_subset(&self, n: usize, seed: u64) -> Result<Dataset, DatasetError> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        let (mut picked, _) = split_dataset(self, n as f64 / self.len() as f64, seed)?;
        picked.items.sort_by(|a, b| a.path.cmp(&b.path));
        picked.skipped = self.skipped;
        Ok(picked)
    }

    /// Decodes and preprocesses every item; unreadable images are skipped.
    pub fn materialize(&self, config: &PreprocessConfig) -> Samples {
        let mut s = Samples::default();
        for item in &self.items {
            match load_image(&item.path).and_then(|img| build_input_tensor(&img, config)) {
                Ok(t) => s.push(t, item.label),
                Err(e) => {
                    tracing::warn!(path = %item.path.display(), error = %e, "skipping unreadable image");
                    s.skipped += 1;
                }
            }
        }
        s
    }
}

/// Enumerates `Parasitized/` and `Uninfected/` image files in sorted path order.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let root = root.as_ref();
    let mut ds = Dataset::default();
    for (dir, label) in CLASS_DIRS {
        let path = root.join(dir);
        if !path.is_dir() {
            return Err(DatasetError::MissingClass(path));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort();
        for p in files {
            if image::image_dimensions(&p).is_ok() {
                ds.items.push(DatasetItem { path: p, label });
            } else {
                tracing::warn!(path = %p.display(), "skipping unreadable image");
                ds.skipped += 1;
            }
        }
        if ds.count(label) == 0 {
            return Err(DatasetError::EmptyClass(label));
        }
    }
    Ok(ds)
}

/// Stratified split into (train, validation). Each class is shuffled with
/// the seeded RNG; the train side holds `round(ratio · n)` items overall.
pub fn split_indices(labels: &[Label], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::Split(format!("ratio {ratio} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Parasitized).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Uninfected).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let total = (ratio * labels.len() as f64).round() as usize;
    let pos_train = ((ratio * pos.len() as f64).round() as usize).min(total).min(pos.len());
    let neg_train = total - pos_train;
    if neg_train > neg.len() {
        return Err(DatasetError::Split("not enough negatives for the train side".into()));
    }
    for (class, n_train, label) in [(&pos, pos_train, Label::Parasitized), (&neg, neg_train, Label::Uninfected)] {
        if n_train == 0 || n_train == class.len() {
            return Err(DatasetError::Split(format!(
                "class {label} ({} items) would leave one side empty at ratio {ratio}",
                class.len()
            )));
        }
    }
    let mut train: Vec<usize> = pos[..pos_train].iter().chain(&neg[..neg_train]).copied().collect();
    let mut val: Vec<usize> = pos[pos_train..].iter().chain(&neg[neg_train..]).copied().collect();
    train.shuffle(&mut rng);
    val.shuffle(&mut rng);
    Ok((train, val))
}

pub fn split_dataset(d: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
    let labels: Vec<Label> = d.items.iter().map(|i| i.label).collect();
    let (train, val) = split_indices(&labels, ratio, seed)?;
    let pick = |idx: &[usize]| Dataset {
        items: idx.iter().map(|&i| d.items[i].clone()).collect(),
        skipped: 0,
    };
    Ok((pick(&train), pick(&val)))
}

/// Preprocessed inputs, each shaped (1, C, H, W), with their labels.
#[derive(Debug, Clone, Default)]
pub struct Samples {
    pub inputs: Vec<Tensor<f32>>,
    pub labels: Vec<Label>,
    pub skipped: usize,
}

impl Samples {
    pub fn push(&mut self, input: Tensor<f32>, label: Label) {
        self.inputs.push(input);
        self.labels.push(label);
    }

    pub fn from_images<'a>(
        images: impl IntoIterator<Item = (&'a Image, Label)>,
        config: &PreprocessConfig,
    ) -> crate::imgproc::Result<Self> {
        let mut s = Samples::default();
        for (img, label) in images {
            s.push(build_input_tensor(img, config)?, label);
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Samples {
        Samples {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            skipped: 0,
        }
    }

    pub fn split(&self, ratio: f64, seed: u64) -> Result<(Samples, Samples), DatasetError> {
        let (train, val) = split_indices(&self.labels, ratio, seed)?;
        Ok((self.subset(&train), self.subset(&val)))
    }

    fn batch(&self, idx: &[usize], flips: Option<&mut ChaCha8Rng>) -> Result<(Tensor<f32>, Vec<f32>), TensorError> {
        let items: Vec<Tensor<f32>> = match flips {
            None => idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            Some(rng) => idx
                .iter()
                .map(|&i| {
                    use rand::Rng;
                    let (h, v) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
                    flip(&self.inputs[i], h, v)
                })
                .collect(),
        };
        Ok((Tensor::stack(&items)?, idx.iter().map(|&i| self.labels[i].target()).collect()))
    }
}

fn flip(t: &Tensor<f32>, horizontal: bool, vertical: bool) -> Tensor<f32> {
    if !horizontal && !vertical {
        return t.clone();
    }
    let s = t.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let src = t.data();
    Tensor::from_fn(s.to_vec(), |i| {
        let plane = i / (h * w);
        let (y, x) = ((i / w) % h, i % w);
        let sy = if vertical { h - 1 - y } else { y };
        let sx = if horizontal { w - 1 - x } else { x };
        src[plane * h * w + sy * w + sx]
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor<f32>,
    pub v: Tensor<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape.to_vec()),
            v: Tensor::zeros(shape.to_vec()),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update; advances `state.t` by one.
pub fn adam_step(
    param: &mut Tensor<f32>,
    grad: &Tensor<f32>,
    state: &mut AdamState,
    lr: f32,
    hyper: &AdamHyper,
) -> Result<(), TensorError> {
    if param.shape() != grad.shape() || param.shape() != state.m.shape() || param.shape() != state.v.shape() {
        return Err(dim_err(
            "adam_step",
            "shape",
            format!("param {:?}, grad {:?}, state {:?}", param.shape(), grad.shape(), state.m.shape()),
        ));
    }
    state.t += 1;
    let AdamHyper { beta1, beta2, epsilon } = *hyper;
    let c1 = 1.0 - (beta1 as f64).powi(state.t as i32);
    let c2 = 1.0 - (beta2 as f64).powi(state.t as i32);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] as f64 / c1;
        let v_hat = v[i] as f64 / c2;
        *p -= (lr as f64 * m_hat / (v_hat.sqrt() + epsilon as f64)) as f32;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauMonitor {
    TrainAccuracy,
    ValAccuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub monitor: PlateauMonitor,
    pub patience: usize,
    pub factor: f32,
    pub min_lr: f32,
    /// Smallest change in the monitored accuracy that counts as improvement.
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            monitor: PlateauMonitor::TrainAccuracy,
            patience: 3,
            factor: 0.5,
            min_lr: 1e-6,
            min_delta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub adam: AdamHyperConfig,
    /// Training stops after the first epoch whose validation accuracy exceeds this.
    pub early_stop_val_acc: f64,
    pub plateau: PlateauConfig,
    pub split_ratio: f64,
    pub seed: u64,
    /// Random horizontal and vertical flips of training inputs.
    pub augment_flips: bool,
}

/// Serializable mirror of [`AdamHyper`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyperConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl From<AdamHyperConfig> for AdamHyper {
    fn from(c: AdamHyperConfig) -> Self {
        AdamHyper {
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamHyper::default();
        Self {
            epochs: 30,
            learning_rate: 1e-4,
            batch_size: 32,
            adam: AdamHyperConfig {
                beta1: a.beta1,
                beta2: a.beta2,
                epsilon: a.epsilon,
            },
            early_stop_val_acc: 0.98,
            plateau: PlateauConfig::default(),
            split_ratio: 0.8,
            seed: 0,
            augment_flips: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split ratio must lie in (0, 1)");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be at least 1");
        }
        if !(self.plateau.factor > 0.0 && self.plateau.factor < 1.0) {
            return bad("plateau factor must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub val_accuracy: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub learning_rate: f32,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub graph: LayerGraph,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Numerically stable binary cross-entropy on a logit.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Minimizes binary cross-entropy with Adam, evaluating on `val` after every
/// epoch. `on_epoch` sees each record as it is produced.
pub fn train(
    mut graph: LayerGraph,
    train_set: &Samples,
    val: &Samples,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let logit = graph.logit_node().ok_or(TrainError::NoLogit)?;
    if train_set.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    let hyper: AdamHyper = config.adam.into();
    let trainable: Vec<(usize, Slot)> = graph
        .nodes()
        .iter()
        .enumerate()
        .flat_map(|(i, n)| n.params.iter().filter(|(s, _)| s.trainable()).map(move |(s, _)| (i, *s)))
        .collect();
    let mut states: Vec<AdamState> = trainable
        .iter()
        .map(|&(i, s)| AdamState::new(graph.node(i).param(s).expect("listed").shape()))
        .collect();

    let mut lr = config.learning_rate;
    let mut best_monitor = f64::NEG_INFINITY;
    let mut wait = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = train_set.batch(idx, config.augment_flips.then_some(&mut rng))?;
            let trace = graph.forward_traced(&x, Mode::Train)?;
            let z = trace.output_of(logit);
            let n = idx.len() as f64;
            let mut seed_grad = Tensor::zeros(z.shape().to_vec());
            for (k, (&zk, &yk)) in z.data().iter().zip(&y).enumerate() {
                let l = bce_with_logit(zk as f64, yk as f64);
                if !l.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, batch: b });
                }
                loss_sum += l;
                let p = crate::ops::activation::sigmoid_scalar(zk as f64);
                correct += usize::from((p >= 0.5) == (yk >= 0.5));
                seed_grad.data_mut()[k] = ((p - yk as f64) / n) as f32;
            }
            let grads = graph.backward(&trace, &[(logit, &seed_grad)])?;
            graph.apply_batch_stats(&trace);
            for (&(node, slot), state) in trainable.iter().zip(&mut states) {
                let Some(g) = grads.param(&graph, node, slot).cloned() else { continue };
                if let Some(p) = graph.param_mut(node, slot) {
                    adam_step(p, &g, state, lr, &hyper)?;
                }
            }
        }
        let m = evaluate_metrics(&graph, val, 0.5)?;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            accuracy: correct as f64 / train_set.len() as f64,
            val_accuracy: m.accuracy,
            val_precision: m.precision,
            val_recall: m.recall,
            learning_rate: lr,
        };
        tracing::info!(
            epoch,
            loss = record.loss,
            acc = record.accuracy,
            val_acc = record.val_accuracy,
            lr = record.learning_rate,
            "epoch finished"
        );
        on_epoch(&record);
        history.push(record);
        if record.val_accuracy > config.early_stop_val_acc {
            return Ok(TrainOutcome {
                graph,
                history,
                stopped_early: true,
            });
        }
        let monitored = match config.plateau.monitor {
            PlateauMonitor::TrainAccuracy => record.accuracy,
            PlateauMonitor::ValAccuracy => record.val_accuracy,
        };
        if monitored >= best_monitor + config.plateau.min_delta {
            best_monitor = monitored;
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.plateau.patience {
                lr = (lr * config.plateau.factor).max(config.plateau.min_lr);
                wait = 0;
            }
        }
    }
    Ok(TrainOutcome {
        graph,
        history,
        stopped_early: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    /// Set when nothing was predicted positive and precision is reported as 0.
    pub precision_undefined: bool,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            tp,
            fp,
            tn,
            fn_,
            precision_undefined: tp + fp == 0,
        }
    }

    pub fn from_scores(scores: &[f32], labels: &[Label], threshold: f32) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&s, &l) in scores.iter().zip(labels) {
            match (Label::from_probability(s, threshold), l) {
                (Label::Parasitized, Label::Parasitized) => tp += 1,
                (Label::Parasitized, Label::Uninfected) => fp += 1,
                (Label::Uninfected, Label::Uninfected) => tn += 1,
                (Label::Uninfected, Label::Parasitized) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }
}

const EVAL_BATCH: usize = 32;

/// Parasitized probabilities for every sample, in inference mode.
pub fn predict_all(graph: &LayerGraph, samples: &Samples) -> Result<Vec<f32>, TensorError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.inputs.chunks(EVAL_BATCH) {
        out.extend(graph.forward(&Tensor::stack(chunk)?)?.into_data());
    }
    Ok(out)
}

pub fn evaluate_metrics(graph: &LayerGraph, samples: &Samples, threshold: f32) -> Result<Metrics, TensorError> {
    if samples.is_empty() {
        return Ok(Metrics::from_counts(0, 0, 0, 0));
    }
    Ok(Metrics::from_scores(&predict_all(graph, samples)?, &samples.labels, threshold))
}

/// Training history as CSV: epoch, loss, acc, val_acc, val_prec, val_rec, lr.
pub fn write_history_csv(history: &[EpochRecord], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "loss", "acc", "val_acc", "val_prec", "val_rec", "lr"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.6}", r.loss),
            format!("{:.6}", r.accuracy),
            format!("{:.6}", r.val_accuracy),
            format!("{:.6}", r.val_precision),
            format!("{:.6}", r.val_recall),
            format!("{:e}", r.learning_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// True when no path appears twice.
pub fn paths_unique(d: &Dataset) -> bool {
    let mut seen = HashSet::new();
    d.items.iter().all(|i| seen.insert(&i.path))
}
