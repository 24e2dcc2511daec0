use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use plasmo_core::api::ModelInfo;
use plasmo_core::explainer::conv_layers;
use plasmo_core::localizer::LocalizeConfig;
use plasmo_core::tensor::DType;
use plasmo_core::CellModel;

use crate::error::ApiError;
use crate::store::{CaseStore, StoreError};

pub const DEFAULT_PORT: u16 = 8750;
pub const DEFAULT_MAX_UPLOAD: usize = 10 * 1024 * 1024;
/// Overrides the case store directory.
pub const STORE_DIR_ENV: &str = "PLASMO_STORE_DIR";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Model used when a request names none.
    pub model: Option<PathBuf>,
    /// Model scoring localizer windows; falls back to `model`.
    pub localizer_model: Option<PathBuf>,
    pub store_dir: PathBuf,
    pub max_upload_bytes: usize,
    pub localize: LocalizeConfig,
    pub default_alpha: f32,
}

impl ServerConfig {
    pub fn new(store_dir: impl Into<PathBuf>) -> Self {
        Self {
            model: None,
            localizer_model: None,
            store_dir: store_dir.into(),
            max_upload_bytes: DEFAULT_MAX_UPLOAD,
            localize: LocalizeConfig::default(),
            default_alpha: 0.5,
        }
    }

    /// `PLASMO_STORE_DIR` when set, else `fallback`.
    pub fn store_dir_from_env(fallback: impl Into<PathBuf>) -> PathBuf {
        std::env::var_os(STORE_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| fallback.into())
    }
}

/// A model and where it came from.
#[derive(Debug)]
pub struct LoadedModel {
    pub path: Option<PathBuf>,
    pub model: CellModel,
}

impl LoadedModel {
    pub fn info(&self) -> ModelInfo {
        let graph = &self.model.graph;
        ModelInfo {
            path: self.path.clone(),
            arch: self.model.arch.clone(),
            input_mode: self.model.preprocess.input_mode,
            params: graph.count_params(),
            quantized: graph
                .nodes()
                .iter()
                .flat_map(|n| &n.params)
                .any(|(_, t)| t.dtype() == DType::I8),
            conv_layers: conv_layers(graph),
        }
    }
}

type CacheKey = (PathBuf, Option<SystemTime>);

pub struct AppState {
    pub config: ServerConfig,
    pub store: CaseStore,
    default_model: Option<Arc<LoadedModel>>,
    localizer: Option<Arc<LoadedModel>>,
    cache: Mutex<HashMap<CacheKey, Arc<LoadedModel>>>,
}

fn load(path: &Path) -> Result<Arc<LoadedModel>, ApiError> {
    let model = CellModel::load(path)?;
    Ok(Arc::new(LoadedModel {
        path: Some(path.to_path_buf()),
        model,
    }))
}

impl AppState {
    pub fn new(config: ServerConfig) -> Result<Self, StartError> {
        let open = |p: &Option<PathBuf>| {
            p.as_deref()
                .map(|p| load(p).map_err(|e| StartError::Model(p.to_path_buf(), e.message)))
                .transpose()
        };
        let default_model = open(&config.model)?;
        let localizer = open(&config.localizer_model)?;
        let store = CaseStore::open(&config.store_dir)?;
        Ok(Self {
            config,
            store,
            default_model,
            localizer,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn default_model(&self) -> Option<&Arc<LoadedModel>> {
        self.default_model.as_ref()
    }

    pub fn localizer_model(&self) -> Option<&Arc<LoadedModel>> {
        self.localizer.as_ref().or(self.default_model.as_ref())
    }

    /// The model a request asked for by server-side path, reloaded when the
    /// file changes, or `fallback`.
    pub fn resolve(&self, requested: Option<&Path>, fallback: Option<&Arc<LoadedModel>>) -> Result<Arc<LoadedModel>, ApiError> {
        let Some(path) = requested else {
            return fallback
                .cloned()
                .ok_or_else(|| ApiError::bad_request("no_model", "the server has no default model; pass ?model=<path>"));
        };
        let modified = std::fs::metadata(path).and_then(|m| m.modified()).ok();
        let key = (path.to_path_buf(), modified);
        if let Some(m) = self.cache.lock().expect("model cache lock").get(&key) {
            return Ok(m.clone());
        }
        let m = load(path)?;
        self.cache.lock().expect("model cache lock").insert(key, m.clone());
        Ok(m)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error("cannot load model {0}: {1}")]
    Model(PathBuf, String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot bind: {0}")]
    Bind(#[from] std::io::Error),
}
