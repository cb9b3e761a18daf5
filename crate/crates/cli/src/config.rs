//! Run configuration files (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use unisolver::data::Dtype;
use unisolver::model::ModelConfig;
use unisolver::solvers::TaskSpec;
use unisolver::train::TrainConfig;

pub const FAMILIES: [&str; 4] = ["string", "advection", "family1d", "heterns-mini"];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateFile {
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default)]
    dtype: DtypeName,
    #[serde(default)]
    task: toml::Table,
}

fn default_samples() -> usize {
    100
}

#[derive(Debug, Default, Deserialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum DtypeName {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone)]
pub struct GenerateConfig {
    pub samples: usize,
    pub dtype: Dtype,
    pub task: TaskSpec,
}

/// Reads a generation config; `[task]` holds the family's parameters and
/// any key left out keeps its default.
pub fn load_generate(family: &str, path: Option<&Path>) -> Result<GenerateConfig> {
    if !FAMILIES.contains(&family) {
        bail!("unknown family {family:?}; expected one of {}", FAMILIES.join(", "));
    }
    let file: GenerateFile = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => toml::from_str("")?,
    };
    let mut task = file.task;
    if let Some(tag) = task.get("family") {
        if tag.as_str() != Some(family) {
            bail!("config declares family {tag} but {family:?} was requested");
        }
    }
    task.insert("family".into(), toml::Value::String(family.into()));
    let task: TaskSpec = toml::Value::Table(task).try_into().context("invalid [task] section")?;
    Ok(GenerateConfig {
        samples: file.samples,
        dtype: match file.dtype {
            DtypeName::F32 => Dtype::F32,
            DtypeName::F64 => Dtype::F64,
        },
        task,
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    dataset: PathBuf,
    checkpoint: PathBuf,
    curve: Option<PathBuf>,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    train: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Reads a training run config. Relative paths are taken from the config's
/// directory.
pub fn load_run(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: RunFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
    let checkpoint = resolve(file.checkpoint);
    let curve = match file.curve {
        Some(c) => resolve(c),
        None => checkpoint.with_extension("curve.jsonl"),
    };
    let mut model = file.model;
    if let unisolver::model::SymbolSource::Precomputed { path } = &mut model.symbols {
        *path = resolve(PathBuf::from(&*path)).to_string_lossy().into_owned();
    }
    Ok(RunConfig {
        dataset: resolve(file.dataset),
        checkpoint,
        curve,
        model,
        train: file.train,
    })
}
