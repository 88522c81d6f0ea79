//! User-facing orchestration: predict-and-initialize from a trained
//! hypernetwork, transfer-learning head re-initialization, prediction
//! diversity analysis, and declarative end-to-end recipes.

use crate::archspace::{generate_dataset, ArchKind, ArchSpec, GptSpec, ViTSpec};
use crate::decoder::{predict_all, NamedTensor, PredictedParameterSet, TensorSource};
use crate::encoder::{encode_graph, EncoderConfig};
use crate::graphir::build_graph;
use crate::trainer::{Checkpoint, OptKind, PreparedGraph, TrainConfig, Trainer};
use crate::trainer::tasks::{ImageDataset, TaskDataset, TokenDataset};
use crate::{DecoderConfig, LogahError, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Predict a full parameter set for `spec` from a trained checkpoint.
/// Deterministic: same checkpoint and spec always give the same tensors.
pub fn initialize_from_ghn(ckpt: &Checkpoint, spec: &ArchSpec) -> Result<PredictedParameterSet> {
    let graph = build_graph(spec)?;
    let features = encode_graph(&graph, &ckpt.model.encoder)?;
    predict_all(&graph, &features, &ckpt.model.decoder, &ckpt.model.decoder.config)
}

/// [`initialize_from_ghn`] plus the on-disk archive.
pub fn write_initialization(
    ckpt: &Checkpoint,
    spec: &ArchSpec,
    dir: &Path,
) -> Result<PredictedParameterSet> {
    let set = initialize_from_ghn(ckpt, spec)?;
    crate::tensorio::write_archive(&set, dir)?;
    Ok(set)
}

/// Replace the classification (or LM) head with fan-in-scaled normal draws at
/// a new output count; every other tensor is copied bit-for-bit.
pub fn transfer_reinit_head(
    params: &PredictedParameterSet,
    new_num_classes: usize,
    seed: u64,
) -> Result<PredictedParameterSet> {
    let head_name = if params.tensors.contains_key("head.weight") {
        "head.weight"
    } else if params.tensors.contains_key("lm_head.weight") {
        "lm_head.weight"
    } else {
        return Err(LogahError::MissingTensor("head.weight / lm_head.weight".into()));
    };
    let hidden = params.tensors[head_name].shape[1];
    let mut out = params.clone();
    let dist = Normal::new(0.0f64, (2.0 / hidden as f64).sqrt()).expect("std > 0");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.tensors.insert(
        head_name.to_string(),
        NamedTensor {
            shape: vec![new_num_classes, hidden],
            data: (0..new_num_classes * hidden).map(|_| dist.sample(&mut rng) as f32).collect(),
            source: TensorSource::Fallback,
        },
    );
    if head_name == "head.weight" && params.tensors.contains_key("head.bias") {
        out.tensors.insert(
            "head.bias".to_string(),
            NamedTensor {
                shape: vec![new_num_classes],
                data: vec![0.0; new_num_classes],
                source: TensorSource::Fallback,
            },
        );
    }
    Ok(out)
}

/// Pairwise spread of same-shape predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    pub shape: Vec<usize>,
    pub pair_count: usize,
    /// mean over pairs of 1 - |cos(u, v)|
    pub mean_abs_cos_distance: f64,
    pub pairs: Vec<f64>,
    /// tensors skipped because their norm is zero
    pub excluded_zero_norm: usize,
}

fn abs_cos_distance(u: &[f32], v: &[f32]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum();
    let nu: f64 = u.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|&b| (b as f64).powi(2)).sum::<f64>().sqrt();
    // rounding can push |cos| a hair past 1; keep the distance in [0, 1]
    (1.0 - (dot.abs() / (nu * nv)).min(1.0)).max(0.0)
}

/// Distance over all pairs of tensors matching `shape` in the set.
pub fn diversity_report(params: &PredictedParameterSet, shape: &[usize]) -> Result<DiversityReport> {
    let tensors: Vec<&NamedTensor> =
        params.tensors.values().filter(|t| t.shape == shape).collect();
    diversity_of_tensors(&tensors, shape)
}

/// Same metric over an explicit list of same-shape tensors.
pub fn diversity_of_tensors(tensors: &[&NamedTensor], shape: &[usize]) -> Result<DiversityReport> {
    let mut kept: Vec<&NamedTensor> = Vec::new();
    let mut excluded = 0usize;
    for t in tensors {
        if t.shape != shape {
            return Err(LogahError::ShapeContract(format!(
                "tensor shape {:?} does not match queried {:?}",
                t.shape, shape
            )));
        }
        if t.data.iter().all(|&v| v == 0.0) {
            excluded += 1;
            eprintln!("warning: excluding zero-norm tensor from diversity report");
        } else {
            kept.push(t);
        }
    }
    if kept.len() < 2 {
        return Err(LogahError::Config(format!(
            "need at least 2 nonzero tensors of shape {shape:?}, have {}",
            kept.len()
        )));
    }
    let mut pairs = Vec::new();
    for i in 0..kept.len() {
        for j in i + 1..kept.len() {
            pairs.push(abs_cos_distance(&kept[i].data, &kept[j].data));
        }
    }
    let mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
    Ok(DiversityReport {
        shape: shape.to_vec(),
        pair_count: pairs.len(),
        mean_abs_cos_distance: mean,
        pairs,
        excluded_zero_norm: excluded,
    })
}

/// Generate an architecture dataset and write the JSONL file plus its
/// parameter-count histogram sidecar (`<out>.hist.csv`, 1M-wide buckets).
pub fn generate_dataset_files(
    kind: ArchKind,
    count: usize,
    seed: u64,
    cap: u64,
    out: &Path,
) -> Result<crate::archspace::ArchDataset> {
    let ds = generate_dataset(kind, count, seed, cap)?;
    ds.save(out)?;
    let hist = ds.histogram(1_000_000);
    let sidecar = sidecar_path(out);
    hist.write_csv(std::io::BufWriter::new(std::fs::File::create(&sidecar)?))?;
    Ok(ds)
}

/// `<out>.hist.csv` next to the dataset file.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".hist.csv");
    PathBuf::from(s)
}

/// Well-known target presets addressable by name.
pub fn preset_spec(name: &str) -> Result<ArchSpec> {
    Ok(match name {
        "vit-s" => ArchSpec::Vit(ViTSpec::vit_s()),
        "vit-b" => ArchSpec::Vit(ViTSpec::vit_b()),
        "vit-l" => ArchSpec::Vit(ViTSpec::vit_l()),
        "gpt2-s" => ArchSpec::Gpt(GptSpec::gpt2_s()),
        "gpt2-m" => ArchSpec::Gpt(GptSpec::gpt2_m()),
        "gpt2-l" => ArchSpec::Gpt(GptSpec::gpt2_l()),
        other => return Err(LogahError::Config(format!("unknown preset: {other}"))),
    })
}

/// One recipe stage: a name plus `key = value` arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct RecipeStage {
    pub name: String,
    pub args: BTreeMap<String, String>,
}

/// Key-value text format: blank-line-separated blocks, each opened by a
/// `stage = <name>` line; `#` starts a comment.
pub fn parse_recipe(text: &str) -> Result<Vec<RecipeStage>> {
    let mut stages = Vec::new();
    let mut current: Option<RecipeStage> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            if let Some(s) = current.take() {
                stages.push(s);
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            LogahError::Recipe(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key == "stage" {
            if let Some(s) = current.take() {
                stages.push(s);
            }
            current = Some(RecipeStage { name: value.to_string(), args: BTreeMap::new() });
        } else {
            let Some(stage) = current.as_mut() else {
                return Err(LogahError::Recipe(format!(
                    "line {}: '{key}' before any 'stage =' line",
                    lineno + 1
                )));
            };
            stage.args.insert(key.to_string(), value.to_string());
        }
    }
    if let Some(s) = current.take() {
        stages.push(s);
    }
    Ok(stages)
}

fn arg<'a>(stage: &'a RecipeStage, key: &str) -> Result<&'a str> {
    stage
        .args
        .get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| LogahError::Recipe(format!("stage '{}' missing '{key}'", stage.name)))
}

fn arg_or<'a>(stage: &'a RecipeStage, key: &str, default: &'a str) -> &'a str {
    stage.args.get(key).map(|s| s.as_str()).unwrap_or(default)
}

fn parse_num<T: std::str::FromStr>(stage: &RecipeStage, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| {
        LogahError::Recipe(format!("stage '{}': cannot parse {key}='{raw}'", stage.name))
    })
}

/// File produced by a recipe run.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Paths a stage consumes / produces, for the up-front dependency check.
fn stage_io(stage: &RecipeStage) -> (Vec<String>, Vec<String>) {
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for key in ["arch_dataset", "task_path", "checkpoint"] {
        if let Some(v) = stage.args.get(key) {
            inputs.push(v.clone());
        }
    }
    if let Some(v) = stage.args.get("out") {
        outputs.push(v.clone());
        if stage.name == "gen" {
            outputs.push(sidecar_path(Path::new(v)).to_string_lossy().into_owned());
        }
    }
    (inputs, outputs)
}

/// Execute every stage in order inside `workdir`; relative paths resolve
/// against it. Missing dependencies fail before any stage runs. Returns the
/// produced artifacts with content hashes and writes `manifest.txt`.
pub fn run_recipe(stages: &[RecipeStage], workdir: &Path) -> Result<Vec<ArtifactEntry>> {
    // dependency pre-flight: every input must already exist on disk or be
    // produced by an earlier stage
    let mut produced: BTreeSet<String> = BTreeSet::new();
    for stage in stages {
        let (inputs, outputs) = stage_io(stage);
        for input in inputs {
            if !produced.contains(&input) && !workdir.join(&input).exists() {
                return Err(LogahError::Recipe(format!(
                    "stage '{}': dependency '{input}' does not exist",
                    stage.name
                )));
            }
        }
        produced.extend(outputs);
    }

    let mut artifact_paths: Vec<String> = Vec::new();
    for stage in stages {
        match stage.name.as_str() {
            "gen" => {
                let kind: ArchKind = arg(stage, "kind")?.parse()?;
                let count = parse_num(stage, "count", arg(stage, "count")?)?;
                let seed = parse_num(stage, "seed", arg_or(stage, "seed", "0"))?;
                let cap = parse_num(stage, "cap", arg(stage, "cap")?)?;
                let out = arg(stage, "out")?;
                generate_dataset_files(kind, count, seed, cap, &workdir.join(out))?;
                artifact_paths.push(out.to_string());
                artifact_paths
                    .push(sidecar_path(Path::new(out)).to_string_lossy().into_owned());
            }
            "train" => {
                let ds_path = workdir.join(arg(stage, "arch_dataset")?);
                let kind: ArchKind = arg(stage, "kind")?.parse()?;
                let cap = parse_num(stage, "cap", arg_or(stage, "cap", "0"))?;
                let dataset = crate::archspace::ArchDataset::read_jsonl(
                    std::fs::File::open(&ds_path)?,
                    kind,
                    cap,
                )?;
                let task = load_task(
                    arg(stage, "task")?,
                    &workdir.join(arg(stage, "task_path")?),
                )?;
                let cfg = TrainConfig {
                    meta_batch: parse_num(stage, "m", arg_or(stage, "m", "2"))?,
                    mini_batch: parse_num(stage, "n", arg_or(stage, "n", "4"))?,
                    epochs: parse_num(stage, "epochs", arg_or(stage, "epochs", "1"))?,
                    base_lr: parse_num(stage, "lr", arg_or(stage, "lr", "3e-4"))?,
                    weight_decay: parse_num(stage, "wd", arg_or(stage, "wd", "1e-2"))?,
                    gamma: parse_num(stage, "gamma", arg_or(stage, "gamma", "3e-5"))?,
                    optimizer: match arg_or(stage, "optimizer", "adamw") {
                        "sgd" => OptKind::Sgd,
                        _ => OptKind::AdamW,
                    },
                    seed: parse_num(stage, "seed", arg_or(stage, "seed", "0"))?,
                    checkpoint_every: 0,
                };
                let enc = EncoderConfig {
                    d: parse_num(stage, "d", arg_or(stage, "d", "16"))?,
                    layers: parse_num(stage, "layers", arg_or(stage, "layers", "1"))?,
                    heads: parse_num(stage, "heads", arg_or(stage, "heads", "2"))?,
                    max_distance: 8,
                };
                let dec = DecoderConfig {
                    d: enc.d,
                    r: parse_num(stage, "r", arg_or(stage, "r", "4"))?,
                    k: parse_num(stage, "kmax", arg_or(stage, "kmax", "512"))?,
                    num_classes: parse_num(stage, "num_classes", arg_or(stage, "num_classes", "10"))?,
                    fallback_seed: 0,
                };
                let graphs = PreparedGraph::from_records(&dataset.records)?;
                let mut trainer = Trainer::new(enc, dec, cfg)?;
                let rows = trainer.run(&graphs, &task, None, None)?;
                let out = arg(stage, "out")?;
                trainer.checkpoint().save(&workdir.join(out))?;
                artifact_paths.push(out.to_string());
                if let Some(log) = stage.args.get("log") {
                    crate::trainer::write_training_log(
                        &rows,
                        std::fs::File::create(workdir.join(log))?,
                    )?;
                    artifact_paths.push(log.clone());
                }
            }
            "predict" => {
                let ckpt = Checkpoint::load(&workdir.join(arg(stage, "checkpoint")?))?;
                let spec = resolve_spec(stage, workdir)?;
                let out = arg(stage, "out")?;
                write_initialization(&ckpt, &spec, &workdir.join(out))?;
                artifact_paths.push(
                    Path::new(out)
                        .join(crate::tensorio::MANIFEST_NAME)
                        .to_string_lossy()
                        .into_owned(),
                );
            }
            other => {
                return Err(LogahError::Recipe(format!("unknown stage '{other}'")));
            }
        }
    }

    let mut artifacts = Vec::new();
    for p in artifact_paths {
        artifacts.push(ArtifactEntry { sha256: sha256_file(&workdir.join(&p))?, path: p });
    }
    let mut mf = std::io::BufWriter::new(std::fs::File::create(workdir.join("manifest.txt"))?);
    for a in &artifacts {
        writeln!(mf, "{}  {}", a.sha256, a.path)?;
    }
    mf.flush()?;
    Ok(artifacts)
}

/// The architecture a `predict` stage targets: either a named preset or a
/// record index into a generated dataset.
fn resolve_spec(stage: &RecipeStage, workdir: &Path) -> Result<ArchSpec> {
    if let Some(name) = stage.args.get("arch") {
        return preset_spec(name);
    }
    let ds_path = workdir.join(arg(stage, "arch_dataset")?);
    let kind: ArchKind = arg(stage, "kind")?.parse()?;
    let dataset =
        crate::archspace::ArchDataset::read_jsonl(std::fs::File::open(&ds_path)?, kind, 0)?;
    let index: usize = parse_num(stage, "index", arg_or(stage, "index", "0"))?;
    dataset
        .records
        .get(index)
        .map(|r| r.config.clone())
        .ok_or_else(|| LogahError::Recipe(format!("index {index} out of range")))
}

pub fn load_task(kind: &str, path: &Path) -> Result<TaskDataset> {
    match kind {
        "images" => Ok(TaskDataset::Images(ImageDataset::load(path)?)),
        "tokens" => Ok(TaskDataset::Tokens(TokenDataset::load(path)?)),
        other => Err(LogahError::Config(format!("unknown task kind: {other}"))),
    }
}
