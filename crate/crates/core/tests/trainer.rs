use plasmo_core::netzoo::{assemble_model, preset};
use plasmo_core::trainer::{
    adam_step, load_dataset, split_dataset, split_indices, train, AdamHyper, AdamState, DatasetError, Metrics, Samples,
    TrainConfig,
};
use plasmo_core::{Image, InputMode, Label, PreprocessConfig, Tensor};
use proptest::prelude::*;

fn separable(n_per_class: usize) -> Samples {
    let config = PreprocessConfig::with_mode(InputMode::RgbPlusEdge);
    let white = Image::filled(75, 75, [255, 255, 255]);
    let black = Image::filled(75, 75, [0, 0, 0]);
    let mut items = Vec::new();
    for _ in 0..n_per_class {
        items.push((&white, Label::Parasitized));
        items.push((&black, Label::Uninfected));
    }
    Samples::from_images(items, &config).unwrap()
}

fn toy_config(epochs: usize, early_stop: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        early_stop_val_acc: early_stop,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn toy_graph() -> plasmo_core::LayerGraph {
    assemble_model(&preset("tiny_dense", 4).unwrap(), 7).unwrap()
}

#[test]
fn separable_set_stops_early() {
    let data = separable(4);
    let (tr, va) = data.split(0.5, 1).unwrap();
    let out = train(toy_graph(), &tr, &va, &TrainConfig { epochs: 30, ..toy_config(30, 0.98) }, |_| {}).unwrap();
    assert!(out.stopped_early);
    assert!(out.history.len() < 30);
    let last = out.history.last().unwrap();
    assert_eq!(last.val_accuracy, 1.0);
    for r in &out.history[..out.history.len() - 1] {
        assert!(r.val_accuracy <= 0.98, "should have stopped at epoch {}", r.epoch);
    }
    for pair in out.history.windows(2) {
        assert!(pair[1].learning_rate <= pair[0].learning_rate);
    }
}

#[test]
fn loss_falls_and_runs_repeat() {
    let data = separable(4);
    let (tr, va) = data.split(0.5, 1).unwrap();
    let run = || train(toy_graph(), &tr, &va, &toy_config(6, 1.01), |_| {}).unwrap().history;
    let a = run();
    assert_eq!(a.len(), 6);
    let falls = a.windows(2).filter(|p| p[1].loss < p[0].loss).count();
    assert!(falls >= 4, "{:?}", a.iter().map(|r| r.loss).collect::<Vec<_>>());
    assert_eq!(a, run());
    for r in &a {
        assert!(r.loss >= 0.0);
        for m in [r.accuracy, r.val_accuracy, r.val_precision, r.val_recall] {
            assert!((0.0..=1.0).contains(&m));
        }
    }
}

#[test]
fn plateau_halves_to_the_floor() {
    let data = separable(2);
    let (tr, va) = data.split(0.5, 1).unwrap();
    let mut config = toy_config(12, 1.01);
    config.learning_rate = 1e-12;
    config.plateau.min_lr = 5e-13;
    let lrs: Vec<f32> = train(toy_graph(), &tr, &va, &config, |_| {}).unwrap().history.iter().map(|r| r.learning_rate).collect();
    assert_eq!(lrs[0], 1e-12);
    assert!(lrs.iter().all(|&lr| lr >= 5e-13));
    assert_eq!(*lrs.last().unwrap(), 5e-13);
}

#[test]
fn adam_first_step_is_lr() {
    let hyper = AdamHyper::default();
    for g in [1e-3f32, 0.5, -2.0, 40.0] {
        let mut p = Tensor::new([1], vec![1.0f32]).unwrap();
        let mut s = AdamState::new(&[1]);
        adam_step(&mut p, &Tensor::new([1], vec![g]).unwrap(), &mut s, 1e-3, &hyper).unwrap();
        let step = (1.0 - p.data()[0] as f64).abs();
        assert!((step - 1e-3).abs() / 1e-3 < 1e-4, "g {g}: step {step}");
        assert_eq!(s.t, 1);
    }
}

#[test]
fn adam_two_steps_match_hand_recurrence() {
    let (b1, b2, eps, lr) = (0.9f32 as f64, 0.999f32 as f64, 1e-8f32 as f64, 0.01f32 as f64);
    let mut theta = 0.5f64;
    let (mut m, mut v) = (0.0f64, 0.0f64);
    for t in 1..=2 {
        let g = 1.0;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        theta -= lr * mh / (vh.sqrt() + eps);
    }
    let mut p = Tensor::new([1], vec![0.5f32]).unwrap();
    let mut s = AdamState::new(&[1]);
    let g = Tensor::new([1], vec![1.0f32]).unwrap();
    for _ in 0..2 {
        adam_step(&mut p, &g, &mut s, lr as f32, &AdamHyper::default()).unwrap();
    }
    assert!((p.data()[0] as f64 - theta).abs() < 1e-6);
    assert!((s.m.data()[0] as f64 - m).abs() < 1e-7);
    assert!((s.v.data()[0] as f64 - v).abs() / v < 1e-6);
}

fn write_png(path: &std::path::Path, rgb: [u8; 3]) {
    Image::filled(8, 8, rgb).save_png(path).unwrap();
}

#[test]
fn dataset_folders() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for class in ["Parasitized", "Uninfected"] {
        std::fs::create_dir(root.join(class)).unwrap();
        for i in 0..2 {
            write_png(&root.join(class).join(format!("c{i}.png")), [i * 100, 0, 0]);
        }
    }
    std::fs::write(root.join("Uninfected/broken.png"), b"not an image").unwrap();
    std::fs::write(root.join("Uninfected/notes.txt"), b"ignored").unwrap();
    let ds = load_dataset(root).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!((ds.count(Label::Parasitized), ds.count(Label::Uninfected)), (2, 2));
    assert_eq!(ds.skipped, 1);
    let paths: Vec<_> = ds.items.iter().map(|i| i.path.clone()).collect();
    let mut sorted = paths.clone();
    sorted.sort();
    assert_eq!(paths, sorted);
    assert!(matches!(split_dataset(&ds, 0.999, 1), Err(DatasetError::Split(_))));

    std::fs::remove_dir_all(root.join("Uninfected")).unwrap();
    assert!(matches!(load_dataset(root), Err(DatasetError::MissingClass(_))));
    std::fs::create_dir(root.join("Uninfected")).unwrap();
    assert!(matches!(load_dataset(root), Err(DatasetError::EmptyClass(Label::Uninfected))));
}

#[test]
fn hundred_item_split() {
    let labels: Vec<Label> = (0..100).map(|i| if i % 2 == 0 { Label::Parasitized } else { Label::Uninfected }).collect();
    let (tr, va) = split_indices(&labels, 0.8, 9).unwrap();
    assert_eq!((tr.len(), va.len()), (80, 20));
    let pos = |idx: &[usize]| idx.iter().filter(|&&i| labels[i] == Label::Parasitized).count();
    assert_eq!((pos(&tr), pos(&va)), (40, 10));
    assert_eq!(split_indices(&labels, 0.8, 9).unwrap(), (tr, va));
}

#[test]
fn metric_examples() {
    let m = Metrics::from_counts(3, 1, 4, 2);
    assert!((m.precision - 0.75).abs() < 1e-12 && (m.recall - 0.6).abs() < 1e-12 && (m.accuracy - 0.7).abs() < 1e-12);
    let none = Metrics::from_scores(&[0.1, 0.2, 0.3], &[Label::Parasitized, Label::Uninfected, Label::Parasitized], 0.5);
    assert_eq!((none.recall, none.precision, none.precision_undefined), (0.0, 0.0, true));
}

proptest! {
    #[test]
    fn raising_threshold_never_raises_recall(
        rows in prop::collection::vec((0.0f32..1.0, any::<bool>()), 1..60),
        a in 0.0f32..1.0,
        b in 0.0f32..1.0,
    ) {
        let scores: Vec<f32> = rows.iter().map(|r| r.0).collect();
        let labels: Vec<Label> = rows.iter().map(|r| if r.1 { Label::Parasitized } else { Label::Uninfected }).collect();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(Metrics::from_scores(&scores, &labels, hi).recall <= Metrics::from_scores(&scores, &labels, lo).recall);
    }
}
