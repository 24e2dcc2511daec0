mod common;

use common::*;
use plasmo_core::api::{BenchRequest, EvalRequest, QuantizeRequest, TrainRequest};
use plasmo_core::quantizer::serialize_model;
use plasmo_core::synth::write_cell_folders;
use plasmo_core::{CellModel, InputMode};
use plasmo_server::ServerConfig;

fn train_request(data: &std::path::Path, out: std::path::PathBuf) -> TrainRequest {
    TrainRequest {
        data: Some(data.to_path_buf()),
        arch: "tiny_mobile".into(),
        out,
        epochs: Some(2),
        seed: 1,
        input_mode: Some(InputMode::Rgb),
        learning_rate: None,
        batch_size: None,
        subset: Some(30),
        augment_flips: false,
        synthetic_composites: None,
    }
}

#[tokio::test]
async fn train_eval_quantize_bench_round_trip() {
    let dir = store_dir();
    let data = dir.path().join("cells");
    write_cell_folders(&data, 20, 3).unwrap();
    let s = start(ServerConfig::new(dir.path().join("store"))).await;

    let out = dir.path().join("mobile.mlrm");
    let trained = s.client.train(&train_request(&data, out.clone())).await.unwrap();
    assert_eq!(trained.history.len(), 2);
    assert_eq!(trained.train_items + trained.val_items, 30);
    assert_eq!(trained.size_bytes, std::fs::metadata(&out).unwrap().len());
    let history = std::fs::read_to_string(trained.history_csv.as_ref().unwrap()).unwrap();
    assert_eq!(history.lines().count(), 3);
    let model = CellModel::load(&out).unwrap();
    assert_eq!(model.arch, "tiny_mobile");
    assert_eq!(model.preprocess.input_mode, InputMode::Rgb);
    assert_eq!(trained.params, model.graph.count_params());

    let eval = s
        .client
        .eval(&EvalRequest {
            model: out.clone(),
            data: data.clone(),
            split_ratio: None,
            seed: 0,
            threshold: None,
        })
        .await
        .unwrap();
    assert_eq!(eval.items, 40);
    let m = eval.metrics;
    assert_eq!(m.tp + m.fp + m.tn + m.fn_, 40);

    let q_out = dir.path().join("mobile_int8.mlrm");
    let q = s
        .client
        .quantize(&QuantizeRequest {
            model: out.clone(),
            out: q_out.clone(),
        })
        .await
        .unwrap();
    assert_eq!(q.float_bytes, serialize_model(&model).len() as u64);
    assert_eq!(q.int8_bytes, std::fs::metadata(&q_out).unwrap().len());
    assert!(q.ratio <= 0.27, "ratio {}", q.ratio);
    assert!(s.client.model_info(q_out.to_str()).await.unwrap().quantized);

    let csv = dir.path().join("bench.csv");
    let bench = s
        .client
        .bench(&BenchRequest {
            models: vec![out.clone(), q_out.clone()],
            data: data.clone(),
            repetitions: Some(3),
            csv: Some(csv.clone()),
            subset: Some(10),
            seed: 0,
        })
        .await
        .unwrap();
    assert_eq!(bench.reports.len(), 2);
    assert_eq!(bench.reports[0].dtype, "float32");
    assert_eq!(bench.reports[1].dtype, "int8");
    assert_eq!(bench.reports[1].size_bytes, q.int8_bytes);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
}

#[tokio::test]
async fn train_rejects_bad_requests() {
    let dir = store_dir();
    let data = dir.path().join("cells");
    write_cell_folders(&data, 4, 3).unwrap();
    let s = start(ServerConfig::new(dir.path().join("store"))).await;

    let mut req = train_request(&data, dir.path().join("m.mlrm"));
    req.arch = "tiny_transformer".into();
    let e = s.client.train(&req).await.unwrap_err();
    assert_eq!(e.code(), Some("invalid_arch"));
    let plasmo_client::ClientError::Api { body, .. } = &e else { panic!() };
    assert!(body.available.as_ref().unwrap().iter().any(|a| a == "tiny_dense"));

    let mut req = train_request(&data, dir.path().join("m.mlrm"));
    req.data = None;
    assert_eq!(s.client.train(&req).await.unwrap_err().code(), Some("missing_data"));

    let mut req = train_request(&dir.path().join("nowhere"), dir.path().join("m.mlrm"));
    req.subset = None;
    let e = s.client.train(&req).await.unwrap_err();
    assert_eq!(e.status().unwrap().as_u16(), 400);
    assert_eq!(e.code(), Some("invalid_dataset"));

    let mut req = train_request(&data, dir.path().join("m.mlrm"));
    req.learning_rate = Some(-1.0);
    req.subset = None;
    assert_eq!(s.client.train(&req).await.unwrap_err().status().unwrap().as_u16(), 400);

    let e = s
        .client
        .quantize(&QuantizeRequest {
            model: dir.path().join("absent.mlrm"),
            out: dir.path().join("q.mlrm"),
        })
        .await
        .unwrap_err();
    assert_eq!(e.code(), Some("model_not_found"));
}

#[tokio::test]
async fn trains_from_toml_spec() {
    let dir = store_dir();
    let data = dir.path().join("cells");
    write_cell_folders(&data, 6, 5).unwrap();
    let spec = dir.path().join("small.toml");
    std::fs::write(
        &spec,
        r#"
name = "small"
input_size = 40
[[blocks]]
kind = "plain_conv"
channels_out = 8
stride = 2
pool_after = true
"#,
    )
    .unwrap();
    let s = start(ServerConfig::new(dir.path().join("store"))).await;
    let mut req = train_request(&data, dir.path().join("small.mlrm"));
    req.arch = spec.display().to_string();
    req.subset = None;
    req.epochs = Some(1);
    let r = s.client.train(&req).await.unwrap();
    let model = CellModel::load(&r.model).unwrap();
    assert_eq!(model.arch, "small");
    assert_eq!(model.preprocess.target_size, (40, 40));
}
