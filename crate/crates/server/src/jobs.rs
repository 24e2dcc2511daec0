//! Blocking model operations behind the JSON job endpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use plasmo_core::api::{
    BenchRequest, BenchResponse, EvalRequest, EvalResponse, QuantizeRequest, QuantizeResponse, TrainRequest,
    TrainResponse,
};
use plasmo_core::imgproc::InputMode;
use plasmo_core::model::DECISION_THRESHOLD;
use plasmo_core::netzoo::{assemble_model, preset, ModelSpec, PRESETS};
use plasmo_core::quantizer::{benchmark_model, serialize_model, write_report_csv};
use plasmo_core::synth::train_window_model;
use plasmo_core::trainer::{evaluate_metrics, load_dataset, split_dataset, train, write_history_csv, TrainConfig};
use plasmo_core::{CellModel, PreprocessConfig};

use crate::error::ApiError;

pub const WINDOW_ARCH: &str = "window";
const DEFAULT_COMPOSITES: usize = 80;
const DEFAULT_BENCH_REPS: usize = 10;

fn resolve_spec(arch: &str, channels: usize) -> Result<ModelSpec, ApiError> {
    if let Some(spec) = preset(arch, channels) {
        return Ok(spec);
    }
    let path = Path::new(arch);
    if path.extension().is_some_and(|e| e == "toml") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ApiError::bad_request("unreadable_file", format!("{}: {e}", path.display())))?;
        let mut spec = ModelSpec::from_toml(&text).map_err(|e| ApiError::bad_request("invalid_arch", e))?;
        spec.input_channels = channels;
        return Ok(spec);
    }
    let mut names: Vec<String> = PRESETS.iter().map(|s| s.to_string()).collect();
    names.push(WINDOW_ARCH.to_string());
    Err(ApiError::bad_request("invalid_arch", format!("unknown architecture {arch:?}")).with_available(names))
}

fn history_path(out: &Path) -> PathBuf {
    out.with_extension("history.csv")
}

fn write_history(out: &Path, history: &[plasmo_core::trainer::EpochRecord]) -> Result<PathBuf, ApiError> {
    let path = history_path(out);
    let file = std::fs::File::create(&path).map_err(|e| ApiError::bad_request("unwritable_file", format!("{}: {e}", path.display())))?;
    write_history_csv(history, file).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(path)
}

fn save(model: &CellModel, out: &Path) -> Result<u64, ApiError> {
    model.save(out).map_err(|e| ApiError::bad_request("unwritable_file", format!("{}: {e}", out.display())))
}

pub fn train_model(req: &TrainRequest) -> Result<TrainResponse, ApiError> {
    let started = Instant::now();
    if req.arch == WINDOW_ARCH {
        let trained = train_window_model(req.synthetic_composites.unwrap_or(DEFAULT_COMPOSITES), req.seed)?;
        let size_bytes = save(&trained.model, &req.out)?;
        let history_csv = write_history(&req.out, &trained.history)?;
        return Ok(TrainResponse {
            model: req.out.clone(),
            history_csv: Some(history_csv),
            size_bytes,
            params: trained.model.graph.count_params(),
            history: trained.history,
            stopped_early: false,
            validation: trained.validation,
            train_items: trained.train_items,
            val_items: trained.val_items,
            skipped: 0,
            elapsed_s: started.elapsed().as_secs_f64(),
        });
    }
    let data = req
        .data
        .as_deref()
        .ok_or_else(|| ApiError::bad_request("missing_data", "training needs a data folder"))?;
    let mode = req.input_mode.unwrap_or(InputMode::RgbPlusEdge);
    let spec = resolve_spec(&req.arch, mode.channels())?;
    let res = spec.input_resolution();
    let preprocess = PreprocessConfig {
        target_size: (res, res),
        ..PreprocessConfig::with_mode(mode)
    };
    let mut dataset = load_dataset(data).map_err(plasmo_core::Error::from)?;
    if let Some(n) = req.subset {
        dataset = dataset.stratified_subset(n, req.seed).map_err(plasmo_core::Error::from)?;
    }
    let mut config = TrainConfig {
        seed: req.seed,
        augment_flips: req.augment_flips,
        ..TrainConfig::default()
    };
    if let Some(e) = req.epochs {
        config.epochs = e;
    }
    if let Some(lr) = req.learning_rate {
        config.learning_rate = lr;
    }
    if let Some(b) = req.batch_size {
        config.batch_size = b;
    }
    let (train_items, val_items) = split_dataset(&dataset, config.split_ratio, req.seed).map_err(plasmo_core::Error::from)?;
    let train_set = train_items.materialize(&preprocess);
    let val_set = val_items.materialize(&preprocess);
    let graph = assemble_model(&spec, req.seed).map_err(|e| ApiError::bad_request("invalid_arch", e.to_string()))?;
    let outcome = train(graph, &train_set, &val_set, &config, |r| {
        tracing::info!(
            epoch = r.epoch,
            loss = r.loss,
            acc = r.accuracy,
            val_acc = r.val_accuracy,
            lr = r.learning_rate,
            "epoch done"
        );
    })
    .map_err(plasmo_core::Error::from)?;
    let validation = evaluate_metrics(&outcome.graph, &val_set, DECISION_THRESHOLD).map_err(plasmo_core::Error::from)?;
    let model = CellModel::new(spec.name.clone(), preprocess, outcome.graph);
    let size_bytes = save(&model, &req.out)?;
    let history_csv = write_history(&req.out, &outcome.history)?;
    Ok(TrainResponse {
        model: req.out.clone(),
        history_csv: Some(history_csv),
        size_bytes,
        params: model.graph.count_params(),
        history: outcome.history,
        stopped_early: outcome.stopped_early,
        validation,
        train_items: train_set.len(),
        val_items: val_set.len(),
        skipped: dataset.skipped + train_set.skipped + val_set.skipped,
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

pub fn evaluate(model: &CellModel, req: &EvalRequest) -> Result<EvalResponse, ApiError> {
    let mut dataset = load_dataset(&req.data).map_err(plasmo_core::Error::from)?;
    if let Some(ratio) = req.split_ratio {
        dataset = split_dataset(&dataset, ratio, req.seed).map_err(plasmo_core::Error::from)?.1;
    }
    let samples = dataset.materialize(&model.preprocess);
    let metrics = evaluate_metrics(&model.graph, &samples, req.threshold.unwrap_or(DECISION_THRESHOLD))
        .map_err(plasmo_core::Error::from)?;
    Ok(EvalResponse {
        metrics,
        items: samples.len(),
        skipped: dataset.skipped + samples.skipped,
    })
}

pub fn quantize(model: &CellModel, req: &QuantizeRequest) -> Result<QuantizeResponse, ApiError> {
    let float_bytes = serialize_model(model).len() as u64;
    let int8_bytes = save(&model.quantized()?, &req.out)?;
    Ok(QuantizeResponse {
        out: req.out.clone(),
        float_bytes,
        int8_bytes,
        ratio: int8_bytes as f64 / float_bytes as f64,
    })
}

pub fn bench(models: &[(PathBuf, std::sync::Arc<crate::state::LoadedModel>)], req: &BenchRequest) -> Result<BenchResponse, ApiError> {
    let mut dataset = load_dataset(&req.data).map_err(plasmo_core::Error::from)?;
    if let Some(n) = req.subset {
        dataset = dataset.stratified_subset(n, req.seed).map_err(plasmo_core::Error::from)?;
    }
    let reps = req.repetitions.unwrap_or(DEFAULT_BENCH_REPS);
    let mut reports = Vec::with_capacity(models.len());
    for (path, loaded) in models {
        let samples = dataset.materialize(&loaded.model.preprocess);
        let mut report = benchmark_model(&loaded.model, &samples, reps)?;
        report.model = path.display().to_string();
        reports.push(report);
    }
    if let Some(csv) = &req.csv {
        let file = std::fs::File::create(csv).map_err(|e| ApiError::bad_request("unwritable_file", format!("{}: {e}", csv.display())))?;
        write_report_csv(&reports, file).map_err(|e| ApiError::internal(e.to_string()))?;
    }
    Ok(BenchResponse { reports })
}
