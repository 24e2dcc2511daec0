//! `plasmo`: command-line client of the screening service.
//!
//! Every operation goes through the HTTP API. Without `--server`, the CLI
//! uses a service on the default local port when one answers, and otherwise
//! starts an embedded one for the duration of the command.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plasmo_client::{server_path, Client, ClientError, ExplainOptions};
use plasmo_core::api::{BenchRequest, EvalRequest, QuantizeRequest, ReviewRequest, TrainRequest, Verdict};
use plasmo_core::imgproc::{decode_image, InputMode};
use plasmo_core::localizer::draw_boxes;
use plasmo_server::{ServerConfig, DEFAULT_PORT};
use rand::SeedableRng;
use serde::Serialize;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "plasmo", version, about = "Malaria blood-smear screening")]
struct Cli {
    /// Service root URL. Defaults to a local service, started on demand.
    #[arg(long, global = true, env = "PLASMO_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Train a classifier on a Parasitized/Uninfected folder, or the toy
    /// window model with `--arch window`.
    Train(TrainArgs),
    /// Accuracy, precision and recall of a model on a labelled folder.
    Eval(EvalArgs),
    /// Classify cell images.
    Infer(InferArgs),
    /// Find and count cells on a smear image.
    Localize(LocalizeArgs),
    /// Grad-CAM overlay and heatmap for one image.
    Explain(ExplainArgs),
    /// Write an int8 copy of a model.
    Quantize(QuantizeArgs),
    /// Size, latency and accuracy of one or more models.
    Bench(BenchArgs),
    /// Recent screened cases.
    Cases {
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Confirm or override a case's prediction.
    Review {
        id: String,
        #[arg(long, value_parser = parse_verdict)]
        verdict: Verdict,
        #[arg(long)]
        note: Option<String>,
    },
    /// Write generated cell images or a smear composite.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Default classifier.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Window classifier for localization; defaults to `--model`.
    #[arg(long)]
    localizer_model: Option<PathBuf>,
    #[arg(long, env = "PLASMO_STORE_DIR", default_value = "plasmo-data")]
    store_dir: PathBuf,
    #[arg(long)]
    max_upload_bytes: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Preset name, a .toml model spec, or `window`.
    #[arg(long, default_value = "tiny_dense")]
    arch: String,
    #[arg(long, default_value = "model.mlrm")]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_mode)]
    input_mode: Option<InputMode>,
    #[arg(long)]
    learning_rate: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Train on a stratified subset of this many images.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    augment_flips: bool,
    /// Generated smears for the window model.
    #[arg(long)]
    composites: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Score only the held-out side of this split ratio.
    #[arg(long)]
    split_ratio: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threshold: Option<f32>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Also write each image's resized, blurred and edge stages here.
    #[arg(long)]
    dump_preprocessed: Option<PathBuf>,
    #[arg(long = "image", required = true)]
    images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct LocalizeArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Attach the detections to this existing case.
    #[arg(long)]
    case_id: Option<String>,
    /// Annotated copy of the image with a box per detection.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    image: PathBuf,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Target conv layer; defaults to the last one.
    #[arg(long)]
    layer: Option<String>,
    #[arg(long)]
    alpha: Option<f32>,
    #[arg(long, default_value = "gradcam.png")]
    out: PathBuf,
    /// Also write the normalized heatmap as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    image: PathBuf,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    model: PathBuf,
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    model: PathBuf,
    data: PathBuf,
    /// Further models to report alongside the first.
    #[arg(long)]
    compare: Vec<PathBuf>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Images per class, written under Parasitized/ and Uninfected/.
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Write one smear composite PNG with this many cells instead.
    #[arg(long)]
    composite: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_mode(s: &str) -> Result<InputMode, String> {
    s.parse().map_err(|e: plasmo_core::imgproc::ImageError| e.to_string())
}

fn parse_verdict(s: &str) -> Result<Verdict, String> {
    match s {
        "confirmed" => Ok(Verdict::Confirmed),
        "overridden" => Ok(Verdict::Overridden),
        other => Err(format!("expected confirmed or overridden, got {other:?}")),
    }
}

#[derive(Debug)]
enum Failure {
    User(String),
    Internal(String),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e.status() {
            Some(s) if s.is_client_error() => Failure::User(e.to_string()),
            _ => Failure::Internal(e.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::User(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::User(format!("{}: {e}", path.display())))
}

fn print_json(value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn opt_path(p: &Option<PathBuf>) -> Option<String> {
    p.as_deref().map(server_path)
}

fn abs(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// A client plus whatever keeps an embedded service alive.
struct Connection {
    client: Client,
    _store: Option<tempfile::TempDir>,
}

async fn connect(server: Option<String>) -> Result<Connection, Failure> {
    if let Some(url) = server {
        return Ok(Connection {
            client: Client::new(url),
            _store: None,
        });
    }
    let local = Client::new(format!("http://127.0.0.1:{DEFAULT_PORT}"));
    if local.health().await.is_ok() {
        return Ok(Connection {
            client: local,
            _store: None,
        });
    }
    let (store_dir, temp) = match std::env::var_os(plasmo_server::state::STORE_DIR_ENV) {
        Some(dir) => (PathBuf::from(dir), None),
        None => {
            let t = tempfile::tempdir().map_err(|e| Failure::Internal(e.to_string()))?;
            (t.path().to_path_buf(), Some(t))
        }
    };
    tracing::debug!(store = %store_dir.display(), "starting embedded service");
    let addr: SocketAddr = plasmo_server::spawn_local(ServerConfig::new(store_dir))
        .await
        .map_err(|e| Failure::Internal(e.to_string()))?;
    Ok(Connection {
        client: Client::new(format!("http://{addr}")),
        _store: temp,
    })
}

async fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::Serve(a) = cli.command {
        let mut config = ServerConfig::new(a.store_dir);
        config.model = a.model;
        config.localizer_model = a.localizer_model;
        if let Some(m) = a.max_upload_bytes {
            config.max_upload_bytes = m;
        }
        return plasmo_server::serve(config, SocketAddr::new(a.host, a.port), |addr| {
            eprintln!("listening on http://{addr}");
        })
        .await
        .map_err(|e| Failure::Internal(e.to_string()));
    }
    if let Command::Synth(a) = cli.command {
        return synth(a);
    }
    let conn = connect(cli.server).await?;
    let client = &conn.client;
    match cli.command {
        Command::Serve(_) | Command::Synth(_) => unreachable!("handled above"),
        Command::Train(a) => {
            let req = TrainRequest {
                data: a.data.as_deref().map(abs),
                arch: if a.arch.ends_with(".toml") { server_path(Path::new(&a.arch)) } else { a.arch },
                out: abs(&a.out),
                epochs: a.epochs,
                seed: a.seed,
                input_mode: a.input_mode,
                learning_rate: a.learning_rate,
                batch_size: a.batch_size,
                subset: a.subset,
                augment_flips: a.augment_flips,
                synthetic_composites: a.composites,
            };
            print_json(&client.train(&req).await?)
        }
        Command::Eval(a) => {
            let req = EvalRequest {
                model: abs(&a.model),
                data: abs(&a.data),
                split_ratio: a.split_ratio,
                seed: a.seed,
                threshold: a.threshold,
            };
            print_json(&client.eval(&req).await?)
        }
        Command::Infer(a) => {
            let model = opt_path(&a.model);
            let mut results = Vec::with_capacity(a.images.len());
            for path in &a.images {
                let bytes = read(path)?;
                if let Some(dir) = &a.dump_preprocessed {
                    std::fs::create_dir_all(dir).map_err(|e| Failure::User(format!("{}: {e}", dir.display())))?;
                    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
                    for stage in ["resized", "blurred", "edges"] {
                        let png = client.preprocess(bytes.clone(), stage, model.as_deref()).await?;
                        write(&dir.join(format!("{stem}_{stage}.png")), &png)?;
                    }
                }
                let r = client.classify(bytes, model.as_deref()).await?;
                results.push(serde_json::json!({
                    "image": path,
                    "case_id": r.case_id,
                    "label": r.label,
                    "probability": r.probability,
                    "image_hash": r.image_hash,
                }));
            }
            match results.as_slice() {
                [one] => print_json(one),
                _ => print_json(&results),
            }
        }
        Command::Localize(a) => {
            let bytes = read(&a.image)?;
            let r = client
                .localize(bytes.clone(), opt_path(&a.model).as_deref(), a.case_id.as_deref())
                .await?;
            if let Some(out) = &a.out {
                let image = decode_image(&bytes).map_err(|e| Failure::User(e.to_string()))?;
                draw_boxes(&image, &r.detections)
                    .save_png(out)
                    .map_err(|e| Failure::User(format!("{}: {e}", out.display())))?;
            }
            print_json(&r)
        }
        Command::Explain(a) => {
            let bytes = read(&a.image)?;
            let opts = ExplainOptions {
                model: opt_path(&a.model),
                layer: a.layer,
                alpha: a.alpha,
            };
            write(&a.out, &client.explain_png(bytes.clone(), &opts).await?)?;
            if let Some(csv) = &a.csv {
                write(csv, client.explain_csv(bytes, &opts).await?.as_bytes())?;
            }
            print_json(&serde_json::json!({ "overlay": a.out, "heatmap_csv": a.csv }))
        }
        Command::Quantize(a) => {
            let req = QuantizeRequest {
                model: abs(&a.model),
                out: abs(&a.out),
            };
            print_json(&client.quantize(&req).await?)
        }
        Command::Bench(a) => {
            let req = BenchRequest {
                models: std::iter::once(&a.model).chain(&a.compare).map(|m| abs(m)).collect(),
                data: abs(&a.data),
                repetitions: a.repetitions,
                csv: a.csv.as_deref().map(abs),
                subset: a.subset,
                seed: a.seed,
            };
            print_json(&client.bench(&req).await?)
        }
        Command::Cases { limit } => print_json(&client.cases(limit).await?),
        Command::Review { id, verdict, note } => print_json(&client.review(&id, &ReviewRequest { verdict, note }).await?),
    }
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    use plasmo_core::synth::{composite, write_cell_folders, COMPOSITE_SIZE};
    match a.composite {
        None => write_cell_folders(&a.out, a.per_class, a.seed).map_err(|e| Failure::User(e.to_string())),
        Some(n) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
            let c = composite(&mut rng, n, COMPOSITE_SIZE.0, COMPOSITE_SIZE.1);
            c.image.save_png(&a.out).map_err(|e| Failure::User(e.to_string()))?;
            print_json(&c.boxes)
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
