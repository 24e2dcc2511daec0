#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use plasmo_client::Client;
use plasmo_core::netzoo::{assemble_model, preset};
use plasmo_core::synth::{cell_image, composite, train_window_model, COMPOSITE_SIZE};
use plasmo_core::{CellModel, Image, InputMode, PreprocessConfig};
use plasmo_server::ServerConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

pub struct Running {
    pub client: Client,
    pub config: ServerConfig,
}

pub async fn start(config: ServerConfig) -> Running {
    let addr = plasmo_server::spawn_local(config.clone()).await.expect("server starts");
    Running {
        client: Client::new(format!("http://{addr}")),
        config,
    }
}

/// Untrained tiny_vgg over rgb_plus_edge inputs, saved under `dir`.
pub fn classifier(dir: &Path) -> PathBuf {
    let spec = preset("tiny_vgg", 4).unwrap();
    let model = CellModel::new("tiny_vgg", PreprocessConfig::with_mode(InputMode::RgbPlusEdge), assemble_model(&spec, 7).unwrap());
    let path = dir.join("vgg.mlrm");
    model.save(&path).unwrap();
    path
}

/// The toy window classifier, trained once per build and cached on disk.
pub fn window_model() -> &'static Path {
    static PATH: OnceLock<PathBuf> = OnceLock::new();
    PATH.get_or_init(|| {
        let path = Path::new(env!("CARGO_TARGET_TMPDIR")).join("window_s3_n80.mlrm");
        if CellModel::load(&path).is_err() {
            let trained = train_window_model(80, 3).expect("window model trains");
            let tmp = path.with_extension(format!("tmp{}", std::process::id()));
            trained.model.save(&tmp).unwrap();
            std::fs::rename(&tmp, &path).unwrap();
        }
        path
    })
}

pub fn png(image: &Image) -> Vec<u8> {
    image.encode_png().unwrap()
}

pub fn cell_png(seed: u64, infected: bool) -> Vec<u8> {
    png(&cell_image(&mut ChaCha8Rng::seed_from_u64(seed), infected))
}

pub fn composite_png(positives: usize, seed: u64) -> (Vec<u8>, Vec<plasmo_core::localizer::BoxPx>) {
    let c = composite(&mut ChaCha8Rng::seed_from_u64(seed), positives, COMPOSITE_SIZE.0, COMPOSITE_SIZE.1);
    (png(&c.image), c.boxes)
}

pub fn blank_png() -> Vec<u8> {
    composite_png(0, 404).0
}

pub fn store_dir() -> TempDir {
    tempfile::tempdir().unwrap()
}
