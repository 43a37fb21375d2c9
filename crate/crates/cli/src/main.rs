//! `amodal`: single completions, batch runs, synthetic data, evaluation
//! reports and a mock provider server.

mod batch;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use amodal_core::completion::{run_completion_timed, write_run_dir, CompletionError, PipelineConfig, Status};
use amodal_core::eval::{evaluate_run, fleiss_kappa, EvalReport, RatingsTable, SsimParams};
use amodal_core::imaging::Image;
use amodal_core::providers::{ProviderEndpoint, ProviderError, ProviderServer, ProviderSet, RemoteProvider, SceneOracle};
use amodal_core::synth::{generate, GenSpec, SyntheticScene};

/// Exit codes are part of the interface.
pub const EXIT_OK: u8 = 0;
pub const EXIT_BACKEND: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NOT_FOUND: u8 = 3;

#[derive(Parser)]
#[command(name = "amodal", version, about = "Training-free amodal completion engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Complete one object in one image.
    Complete(CompleteArgs),
    /// Run a JSON manifest of jobs.
    Batch(BatchArgs),
    /// Synthetic scene generation.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Evaluation reports and agreement statistics.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Serve the provider protocol from a synthetic scene bundle.
    MockServe(MockServeArgs),
}

#[derive(Args)]
struct ProviderArgs {
    /// Base URL of a provider server.
    #[arg(long, conflicts_with = "mock_scene")]
    endpoint: Option<String>,
    /// Scene bundle directory backing in-process mock providers.
    #[arg(long)]
    mock_scene: Option<PathBuf>,
    /// Per-request timeout in seconds for --endpoint.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    /// Retries per request for --endpoint.
    #[arg(long, default_value_t = 2)]
    retries: u32,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    query: String,
    #[arg(long)]
    out: PathBuf,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    providers: ProviderArgs,
    /// Base inpainting seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Also dump intermediate masks and images.
    #[arg(long)]
    debug: bool,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Write `count` scene bundles for seeds seed..seed+count.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Make the target cross a canvas edge.
        #[arg(long)]
        boundary: bool,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Score run directories against scene bundles with matching names.
    Run {
        #[arg(long)]
        results_dir: PathBuf,
        #[arg(long)]
        truth_dir: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Fleiss' kappa of a ratings CSV.
    Kappa {
        #[arg(long)]
        ratings: PathBuf,
    },
}

#[derive(Args)]
struct MockServeArgs {
    #[arg(long)]
    scene_dir: PathBuf,
    #[arg(long, default_value_t = 8077)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 4)]
    threads: usize,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<amodal_core::Error> for Failure {
    fn from(e: amodal_core::Error) -> Self {
        let code = match e {
            amodal_core::Error::Provider(ProviderError::Unavailable { .. }) => EXIT_BACKEND,
            _ => EXIT_USAGE,
        };
        Failure { code, message: e.to_string() }
    }
}

type CliResult = Result<u8, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Complete(a) => cmd_complete(a),
        Command::Batch(a) => batch::cmd_batch(&a.manifest, &a.out_dir, a.workers),
        Command::Synth(SynthCommand::Gen { seed, count, out_dir, boundary }) => cmd_synth(seed, count, &out_dir, boundary),
        Command::Eval(EvalCommand::Run { results_dir, truth_dir, report }) => cmd_eval(&results_dir, &truth_dir, &report),
        Command::Eval(EvalCommand::Kappa { ratings }) => cmd_kappa(&ratings),
        Command::MockServe(a) => cmd_mock_serve(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("amodal: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

pub fn mock_providers(scene_dir: &Path) -> Result<ProviderSet, Failure> {
    let scene = SyntheticScene::load_bundle(scene_dir)
        .map_err(|e| Failure::usage(format!("cannot load scene bundle {}: {e}", scene_dir.display())))?;
    Ok(ProviderSet::uniform(Arc::new(SceneOracle::new(scene))))
}

pub fn remote_providers(url: &str, timeout: f64, retries: u32) -> Result<ProviderSet, Failure> {
    let endpoint = ProviderEndpoint { timeout, retries, ..ProviderEndpoint::new(url) };
    let remote = RemoteProvider::new(endpoint).map_err(Failure::usage)?;
    Ok(ProviderSet::uniform(Arc::new(remote)))
}

fn providers_from(a: &ProviderArgs) -> Result<ProviderSet, Failure> {
    match (&a.endpoint, &a.mock_scene) {
        (Some(url), None) => remote_providers(url, a.timeout, a.retries),
        (None, Some(dir)) => mock_providers(dir),
        _ => Err(Failure::usage("exactly one of --endpoint or --mock-scene is required")),
    }
}

/// Run one job and write its directory.
pub fn complete_one(
    img: &Image,
    query: &str,
    providers: &ProviderSet,
    cfg: &PipelineConfig,
    out: &Path,
    debug: bool,
) -> Result<Status, CompletionError> {
    match run_completion_timed(img, query, providers, cfg) {
        Ok((result, timings)) => {
            write_run_dir(out, &result, cfg, Some(&timings), debug).map_err(|error| CompletionError {
                stage: amodal_core::completion::Stage::Blending,
                error,
                partial: Vec::new(),
            })?;
            Ok(result.status)
        }
        Err(e) => {
            write_failure(out, &e);
            Err(e)
        }
    }
}

/// Best-effort record of an aborted run next to where its results would go.
fn write_failure(out: &Path, e: &CompletionError) {
    let body = serde_json::json!({
        "status": if e.is_backend() { "backend_unavailable" } else { "error" },
        "stage": e.stage,
        "error": e.error.to_string(),
        "completed_iterations": e.partial.iter().map(|t| serde_json::json!({
            "index": t.index,
            "seed": t.seed,
            "l1_delta": t.l1_delta,
            "occ_area_before": t.occ_mask_before.area(),
            "occ_area_after": t.occ_mask_after.area(),
        })).collect::<Vec<_>>(),
    });
    let write = std::fs::create_dir_all(out)
        .and_then(|_| std::fs::write(out.join("error.json"), serde_json::to_vec_pretty(&body).unwrap_or_default()));
    if let Err(err) = write {
        log::warn!("could not write {}: {err}", out.join("error.json").display());
    }
}

pub fn exit_code_for(r: &Result<Status, CompletionError>) -> u8 {
    match r {
        Ok(Status::Completed) => EXIT_OK,
        Ok(Status::TargetNotFound) => EXIT_NOT_FOUND,
        Err(e) if e.is_backend() => EXIT_BACKEND,
        Err(_) => EXIT_USAGE,
    }
}

fn cmd_complete(a: CompleteArgs) -> CliResult {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| Failure::usage(format!("config {}: {e}", p.display())))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.inpaint_seed = s;
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let providers = providers_from(&a.providers)?;
    let img = Image::load_png(&a.image).map_err(|e| Failure::usage(format!("image {}: {e}", a.image.display())))?;
    let r = complete_one(&img, &a.query, &providers, &cfg, &a.out, a.debug);
    match &r {
        Ok(Status::TargetNotFound) => eprintln!("amodal: no object matches `{}`", a.query),
        Err(e) => eprintln!("amodal: {e}"),
        Ok(Status::Completed) => {}
    }
    Ok(exit_code_for(&r))
}

fn cmd_synth(seed: u64, count: u64, out_dir: &Path, boundary: bool) -> CliResult {
    if count == 0 {
        return Err(Failure::usage("--count must be at least 1"));
    }
    let spec = GenSpec { allow_boundary: boundary, ..GenSpec::default() };
    for s in seed..seed + count {
        let scene = generate(s, &spec)?;
        let dir = out_dir.join(format!("scene-{s:04}"));
        scene.write_bundle(&dir)?;
        println!("{}\t{}", dir.display(), scene.target);
    }
    Ok(EXIT_OK)
}

fn subdirs(dir: &Path) -> Result<Vec<(String, PathBuf)>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Failure::usage(e.to_string()))?;
        if entry.path().is_dir() {
            out.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

fn cmd_eval(results_dir: &Path, truth_dir: &Path, report: &Path) -> CliResult {
    let params = SsimParams::default();
    let fill = [127, 127, 127];
    let mut items = Vec::new();
    for (id, run_dir) in subdirs(results_dir)? {
        if !run_dir.join("trace.json").exists() {
            log::warn!("skipping {}: no trace.json", run_dir.display());
            continue;
        }
        let truth = truth_dir.join(&id);
        let scene = SyntheticScene::load_bundle(&truth)
            .map_err(|e| Failure::usage(format!("no truth bundle for `{id}` in {}: {e}", truth_dir.display())))?;
        let oracle = SceneOracle::new(scene);
        items.push(evaluate_run(&id, &run_dir, &truth, Some(&oracle), &params, fill)?);
    }
    if items.is_empty() {
        return Err(Failure::usage(format!("no run directories under {}", results_dir.display())));
    }
    let report_data = EvalReport::from_items(items, params)?;
    std::fs::write(report, serde_json::to_vec_pretty(&report_data).map_err(amodal_core::Error::from)?)
        .map_err(|e| Failure::usage(format!("{}: {e}", report.display())))?;
    print!("{}", report_data.render_table("ours"));
    Ok(EXIT_OK)
}

fn cmd_kappa(path: &Path) -> CliResult {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let table = RatingsTable::from_csv(&text).map_err(|e| Failure::usage(e.to_string()))?;
    let k = fleiss_kappa(&table).map_err(|e| Failure::usage(e.to_string()))?;
    println!("{k:.3}");
    Ok(EXIT_OK)
}

fn cmd_mock_serve(a: MockServeArgs) -> CliResult {
    let providers = mock_providers(&a.scene_dir)?;
    let server = ProviderServer::start(providers, &format!("{}:{}", a.host, a.port), a.threads)?;
    println!("serving on {}", server.base_url());
    server.join();
    Ok(EXIT_OK)
}
