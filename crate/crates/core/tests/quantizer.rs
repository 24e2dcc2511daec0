mod oracles;

use oracles::expected_file_size;
use plasmo_core::graph::LayerKind;
use plasmo_core::netzoo::{assemble_model, preset, PRESETS};
use plasmo_core::quantizer::{read_model, serialize_model, FormatError};
use plasmo_core::synth::cell_dataset;
use plasmo_core::trainer::{evaluate_metrics, train, Samples, TrainConfig};
use plasmo_core::{CellModel, DType, Image, InputMode, Label, PreprocessConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(name: &str, seed: u64) -> CellModel {
    let pre = PreprocessConfig::with_mode(InputMode::RgbPlusEdge);
    CellModel::new(name, pre, assemble_model(&preset(name, 4).unwrap(), seed).unwrap())
}

#[test]
fn presets_shrink_and_sizes_add_up() {
    for name in PRESETS {
        let float = model(name, 1);
        let quant = float.quantized().unwrap();
        let (fb, qb) = (serialize_model(&float), serialize_model(&quant));
        assert_eq!(fb.len(), expected_file_size(&float), "{name} float");
        assert_eq!(qb.len(), expected_file_size(&quant), "{name} int8");
        let ratio = qb.len() as f64 / fb.len() as f64;
        assert!(ratio <= 0.27, "{name}: {ratio}");
        for node in quant.graph.nodes() {
            let weight = node.param(plasmo_core::Slot::Weight);
            if matches!(node.kind, LayerKind::Conv2d { .. } | LayerKind::DepthwiseConv2d { .. } | LayerKind::Dense) {
                assert_eq!(weight.unwrap().dtype(), DType::I8, "{name}/{}", node.name);
            }
            for (slot, t) in &node.params {
                if *slot != plasmo_core::Slot::Weight {
                    assert_eq!(t.dtype(), DType::F32);
                }
            }
        }
    }
}

#[test]
fn round_trip_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for name in PRESETS {
        for m in [model(name, 2), model(name, 2).quantized().unwrap()] {
            let back = read_model(&serialize_model(&m)).unwrap();
            assert_eq!(back.arch, m.arch);
            assert_eq!(back.preprocess, m.preprocess);
            let x = Tensor::from_fn([2, 4, 75, 75], |_| rng.gen_range(0.0f32..1.0));
            let (a, b) = (m.graph.forward(&x).unwrap(), back.graph.forward(&x).unwrap());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b));
        }
    }
    let mut bytes = serialize_model(&model("tiny_vgg", 1));
    bytes[0] = b'X';
    assert!(matches!(read_model(&bytes), Err(FormatError::BadMagic)));
}

#[test]
fn file_on_disk_matches() {
    let dir = tempfile::tempdir().unwrap();
    let m = model("tiny_mobile", 3).quantized().unwrap();
    let path = dir.path().join("m.mlrm");
    let written = m.save(&path).unwrap();
    assert_eq!(written, std::fs::metadata(&path).unwrap().len());
    assert_eq!(written as usize, expected_file_size(&m));
    let loaded = CellModel::load(&path).unwrap();
    assert_eq!(serialize_model(&loaded), serialize_model(&m));
}

#[test]
fn toy_set_labels_agree() {
    let pre = PreprocessConfig::with_mode(InputMode::RgbPlusEdge);
    let white = Image::filled(75, 75, [255, 255, 255]);
    let black = Image::filled(75, 75, [0, 0, 0]);
    let items: Vec<(&Image, Label)> = (0..4).flat_map(|_| [(&white, Label::Parasitized), (&black, Label::Uninfected)]).collect();
    let data = Samples::from_images(items, &pre).unwrap();
    let (tr, va) = data.split(0.5, 1).unwrap();
    let config = TrainConfig {
        epochs: 10,
        learning_rate: 1e-3,
        batch_size: 4,
        early_stop_val_acc: 1.01,
        seed: 7,
        ..TrainConfig::default()
    };
    let out = train(assemble_model(&preset("tiny_dense", 4).unwrap(), 7).unwrap(), &tr, &va, &config, |_| {}).unwrap();
    let float = CellModel::new("tiny_dense", pre, out.graph);
    let quant = float.quantized().unwrap();
    for (img, _) in [(&white, ()), (&black, ())] {
        assert_eq!(float.predict(img).unwrap().label, quant.predict(img).unwrap().label);
    }
}

#[test]
fn trained_accuracy_survives_quantization() {
    let pre = PreprocessConfig::with_mode(InputMode::RgbPlusEdge);
    let cells = cell_dataset(120, 21);
    let data = Samples::from_images(cells.iter().map(|(i, l)| (i, *l)), &pre).unwrap();
    let (tr, va) = data.split(0.8, 21).unwrap();
    let config = TrainConfig {
        epochs: 8,
        learning_rate: 1e-3,
        seed: 21,
        ..TrainConfig::default()
    };
    let out = train(assemble_model(&preset("tiny_dense", 4).unwrap(), 21).unwrap(), &tr, &va, &config, |_| {})
    .unwrap();
    let float = evaluate_metrics(&out.graph, &va, 0.5).unwrap();
    let quant_graph = CellModel::new("tiny_dense", pre, out.graph).quantized().unwrap().graph;
    let quant = evaluate_metrics(&quant_graph, &va, 0.5).unwrap();
    assert!(float.accuracy >= 0.9, "float accuracy {}", float.accuracy);
    assert!(float.accuracy - quant.accuracy <= 0.02);
}
