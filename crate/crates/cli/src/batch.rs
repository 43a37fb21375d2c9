//! Manifest-driven batch runs.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use amodal_core::completion::{PipelineConfig, Status};
use amodal_core::imaging::Image;
use amodal_core::par::parallel_map;
use amodal_core::providers::ProviderSet;

use crate::{complete_one, mock_providers, remote_providers, CliResult, Failure, EXIT_OK};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Job {
    pub id: String,
    pub image_path: PathBuf,
    pub query: String,
    #[serde(default)]
    pub dataset: Option<String>,
    /// Per-job scene bundle; overrides the manifest-level providers.
    #[serde(default)]
    pub mock_scene: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub jobs: Vec<Job>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub mock_scene: Option<PathBuf>,
    /// Config file applied before `config`.
    #[serde(default)]
    pub config_file: Option<PathBuf>,
    /// `key -> value` overrides in config-file syntax.
    #[serde(default)]
    pub config: BTreeMap<String, String>,
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, Serialize)]
struct JobRecord<'a> {
    id: &'a str,
    query: &'a str,
    dataset: &'a str,
    image_path: &'a Path,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JobSummary {
    pub id: String,
    pub dataset: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchSummary {
    pub counts: BTreeMap<String, usize>,
    pub jobs: Vec<JobSummary>,
}

/// Resolve relative paths against the manifest's directory.
fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn safe_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && id != "." && id != ".."
}

/// Parse and validate; every problem is a usage failure.
pub fn load_manifest(path: &Path) -> Result<(Manifest, PipelineConfig), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("manifest {}: {e}", path.display())))?;
    let mut m: Manifest =
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("manifest {}: {e}", path.display())))?;
    if m.jobs.is_empty() {
        return Err(Failure::usage("manifest has no jobs"));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    for job in &mut m.jobs {
        if !safe_id(&job.id) {
            return Err(Failure::usage(format!("job id `{}` must be non-empty [A-Za-z0-9._-]", job.id)));
        }
        if !seen.insert(job.id.clone()) {
            return Err(Failure::usage(format!("duplicate job id `{}`", job.id)));
        }
        if job.query.trim().is_empty() {
            return Err(Failure::usage(format!("job `{}` has an empty query", job.id)));
        }
        job.image_path = resolve(base, &job.image_path);
        if !job.image_path.is_file() {
            return Err(Failure::usage(format!("job `{}`: no image at {}", job.id, job.image_path.display())));
        }
        if let Some(s) = &job.mock_scene {
            job.mock_scene = Some(resolve(base, s));
        }
        if job.mock_scene.is_none() && m.mock_scene.is_none() && m.endpoint.is_none() {
            return Err(Failure::usage(format!("job `{}` has no provider (set endpoint or mock_scene)", job.id)));
        }
    }
    if m.endpoint.is_some() && m.mock_scene.is_some() {
        return Err(Failure::usage("manifest sets both endpoint and mock_scene"));
    }
    if let Some(s) = &m.mock_scene {
        m.mock_scene = Some(resolve(base, s));
    }
    let mut cfg = match &m.config_file {
        Some(p) => {
            let p = resolve(base, p);
            PipelineConfig::load(&p).map_err(|e| Failure::usage(format!("config {}: {e}", p.display())))?
        }
        None => PipelineConfig::default(),
    };
    for (k, v) in &m.config {
        cfg.set(k, v).map_err(|e| Failure::usage(e.to_string()))?;
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok((m, cfg))
}

fn run_job(job: &Job, shared: Option<&ProviderSet>, m: &Manifest, cfg: &PipelineConfig, out_dir: &Path) -> JobSummary {
    let dataset = job.dataset.clone().unwrap_or_else(|| "default".to_string());
    let summary = |status: &str, error: Option<String>| JobSummary {
        id: job.id.clone(),
        dataset: dataset.clone(),
        status: status.to_string(),
        error,
    };
    let dir = out_dir.join(&job.id);
    let record = JobRecord { id: &job.id, query: &job.query, dataset: &dataset, image_path: &job.image_path };
    let wrote = std::fs::create_dir_all(&dir)
        .and_then(|_| std::fs::write(dir.join("job.json"), serde_json::to_vec_pretty(&record).unwrap_or_default()));
    if let Err(e) = wrote {
        return summary("error", Some(e.to_string()));
    }
    let own;
    let providers = match (&job.mock_scene, shared) {
        (Some(scene), _) => match mock_providers(scene) {
            Ok(p) => {
                own = p;
                &own
            }
            Err(f) => return summary("error", Some(f.message)),
        },
        (None, Some(p)) => p,
        (None, None) => match remote_providers(m.endpoint.as_deref().unwrap_or_default(), m.timeout, m.retries) {
            Ok(p) => {
                own = p;
                &own
            }
            Err(f) => return summary("error", Some(f.message)),
        },
    };
    let img = match Image::load_png(&job.image_path) {
        Ok(i) => i,
        Err(e) => return summary("error", Some(e.to_string())),
    };
    match complete_one(&img, &job.query, providers, cfg, &dir, false) {
        Ok(Status::Completed) => summary("completed", None),
        Ok(Status::TargetNotFound) => summary("target_not_found", None),
        Err(e) if e.is_backend() => summary("backend_unavailable", Some(e.to_string())),
        Err(e) => summary("error", Some(e.to_string())),
    }
}

/// Run every job; summary order is by id regardless of scheduling.
pub fn run_batch(m: &Manifest, cfg: &PipelineConfig, out_dir: &Path, workers: usize) -> Result<BatchSummary, Failure> {
    std::fs::create_dir_all(out_dir).map_err(|e| Failure::usage(format!("{}: {e}", out_dir.display())))?;
    let shared = match (&m.mock_scene, &m.endpoint) {
        (Some(scene), _) => Some(mock_providers(scene)?),
        (None, Some(url)) => Some(remote_providers(url, m.timeout, m.retries)?),
        (None, None) => None,
    };
    let mut jobs = parallel_map(&m.jobs, workers.max(1), |_, job| run_job(job, shared.as_ref(), m, cfg, out_dir));
    jobs.sort_by(|a, b| a.id.cmp(&b.id));
    let mut counts = BTreeMap::new();
    for j in &jobs {
        *counts.entry(j.status.clone()).or_insert(0) += 1;
    }
    Ok(BatchSummary { counts, jobs })
}

pub fn cmd_batch(manifest: &Path, out_dir: &Path, workers: usize) -> CliResult {
    if workers == 0 {
        return Err(Failure::usage("--workers must be at least 1"));
    }
    let (m, cfg) = load_manifest(manifest)?;
    let summary = run_batch(&m, &cfg, out_dir, workers)?;
    let bytes = serde_json::to_vec_pretty(&summary).map_err(|e| Failure::usage(e.to_string()))?;
    std::fs::write(out_dir.join("summary.json"), bytes)
        .map_err(|e| Failure::usage(format!("{}: {e}", out_dir.join("summary.json").display())))?;
    let counts: Vec<String> = summary.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("{}", counts.join(" "));
    Ok(EXIT_OK)
}
