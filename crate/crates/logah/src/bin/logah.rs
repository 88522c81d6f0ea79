//! Command-line front end: dataset generation, parameter-count analysis,
//! hypernetwork training, prediction, head transfer, diversity reports, and
//! recipes.

use clap::{Parser, Subcommand};
use logah::archspace::ArchKind;
use logah::costmodel::{
    ghn3_count_report, logah_count_report, scaling_table, write_scaling_csv, CountReport,
};
use logah::encoder::EncoderConfig;
use logah::trainer::{
    write_training_log, Checkpoint, OptKind, PreparedGraph, TrainConfig, Trainer,
};
use logah::workflows::{
    diversity_report, generate_dataset_files, load_task, parse_recipe, preset_spec, run_recipe,
    transfer_reinit_head, write_initialization,
};
use logah::{ArchDataset, ArchSpec, DecoderConfig, LogahError};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "logah", about = "Low-rank graph hypernetwork toolkit", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample an architecture dataset (JSONL plus histogram CSV sidecar)
    GenDataset {
        /// architecture family: vit | gpt2
        #[arg(long)]
        kind: String,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// parameter-count cap per sampled network
        #[arg(long)]
        cap: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form analyses of decoder size
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
    /// Train a hypernetwork on an architecture dataset and a task dataset
    TrainGhn {
        #[arg(long)]
        arch_dataset: PathBuf,
        /// architecture family of the dataset: vit | gpt2
        #[arg(long)]
        kind: String,
        /// task kind: images | tokens
        #[arg(long)]
        task: String,
        #[arg(long)]
        task_path: PathBuf,
        /// tiny | small | base | large | custom
        #[arg(long, default_value = "custom")]
        variant: String,
        #[arg(long, default_value_t = 16)]
        d: usize,
        #[arg(long, default_value_t = 4)]
        r: usize,
        /// per-side folded-dimension budget K
        #[arg(long, default_value_t = 512)]
        kmax: usize,
        #[arg(long, default_value_t = 1)]
        layers: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        #[arg(long, default_value_t = 10)]
        num_classes: usize,
        /// meta-batch size (graphs per step)
        #[arg(long, default_value_t = 2)]
        m: usize,
        /// mini-batch size (task samples per step)
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        #[arg(long, default_value_t = 3e-4)]
        lr: f64,
        #[arg(long, default_value_t = 1e-2)]
        wd: f64,
        #[arg(long, default_value_t = 3e-5)]
        gamma: f64,
        /// adamw | sgd
        #[arg(long, default_value = "adamw")]
        optimizer: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        /// output checkpoint file
        #[arg(long)]
        out: PathBuf,
        /// optional training-log CSV
        #[arg(long)]
        log: Option<PathBuf>,
        /// resume from an existing checkpoint instead of fresh weights
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict a full parameter set and write it as a named-tensor archive
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// preset name: vit-s | vit-b | vit-l | gpt2-s | gpt2-m | gpt2-l
        #[arg(long, conflicts_with = "arch_dataset")]
        arch: Option<String>,
        /// alternatively: take record `--index` of this dataset
        #[arg(long, requires = "kind")]
        arch_dataset: Option<PathBuf>,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-initialize the classification head of an archive for a new class count
    TransferHead {
        /// input named-tensor archive directory
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        num_classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise cosine-distance spread of same-shape tensors in an archive
    Diversity {
        #[arg(long)]
        params: PathBuf,
        /// tensor shape to compare, e.g. 1000,768
        #[arg(long)]
        shape: String,
    },
    /// Run a key-value stage file and write a hashed artifact manifest
    Recipe {
        #[arg(long)]
        file: PathBuf,
        #[arg(long, default_value = ".")]
        workdir: PathBuf,
    },
}

#[derive(Subcommand)]
enum Analyze {
    /// Decoder parameter count for one configuration
    Count {
        /// ghn3 | logah
        #[arg(long)]
        method: String,
        #[arg(long)]
        d: u64,
        #[arg(long, default_value_t = 32)]
        r: u64,
        #[arg(long, default_value_t = 32768)]
        kmax: u64,
        #[arg(long, default_value_t = 10)]
        num_classes: u64,
    },
    /// Baseline-vs-low-rank counts across target widths, as CSV
    Scaling {
        /// comma-separated widths, e.g. 256,512,1024,2048,4096
        #[arg(long)]
        widths: String,
        /// low-rank config as d,r,K
        #[arg(long)]
        logah: String,
        #[arg(long, default_value_t = 10)]
        num_classes: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_list(s: &str) -> Result<Vec<u64>, LogahError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| LogahError::Parse(format!("bad number in list: '{p}'")))
        })
        .collect()
}

fn print_report(r: &CountReport) {
    println!("method: {}", r.method);
    println!("d: {}", r.d);
    if let Some(rr) = r.r {
        println!("r: {rr}");
    }
    if let Some(k) = r.k {
        println!("K: {k}");
    }
    if let Some(nc) = r.num_classes {
        println!("num_classes: {nc}");
    }
    for (label, value) in &r.notes {
        println!("  {label}: {value}");
    }
    println!("decoder_params: {}", r.decoder_params);
}

fn run(cli: Cli) -> Result<(), LogahError> {
    match cli.cmd {
        Cmd::GenDataset { kind, count, seed, cap, out } => {
            let kind: ArchKind = kind.parse()?;
            let ds = generate_dataset_files(kind, count, seed, cap, &out)?;
            println!("wrote {} records to {}", ds.records.len(), out.display());
        }
        Cmd::Analyze { what } => match what {
            Analyze::Count { method, d, r, kmax, num_classes } => {
                let report = match method.as_str() {
                    "ghn3" => ghn3_count_report(d, num_classes),
                    "logah" => logah_count_report(d, r, kmax),
                    other => {
                        return Err(LogahError::Config(format!("unknown method: {other}")))
                    }
                };
                print_report(&report);
            }
            Analyze::Scaling { widths, logah, num_classes, out } => {
                let widths = parse_list(&widths)?;
                let cfg = parse_list(&logah)?;
                let [d, r, k] = cfg[..] else {
                    return Err(LogahError::Config("--logah wants d,r,K".into()));
                };
                let rows = scaling_table(&widths, (d, r, k), num_classes);
                write_scaling_csv(&rows, std::fs::File::create(&out)?)?;
                println!("wrote {} rows to {}", rows.len(), out.display());
            }
        },
        Cmd::TrainGhn {
            arch_dataset,
            kind,
            task,
            task_path,
            variant,
            d,
            r,
            kmax,
            layers,
            heads,
            num_classes,
            m,
            n,
            epochs,
            lr,
            wd,
            gamma,
            optimizer,
            seed,
            checkpoint_every,
            out,
            log,
            resume,
        } => {
            let kind: ArchKind = kind.parse()?;
            let dataset =
                ArchDataset::read_jsonl(std::fs::File::open(&arch_dataset)?, kind, 0)?;
            let graphs = PreparedGraph::from_records(&dataset.records)?;
            let task = load_task(&task, &task_path)?;
            let (enc, dec) = match variant.as_str() {
                "custom" => (
                    EncoderConfig { d, layers, heads, max_distance: 8 },
                    DecoderConfig { d, r, k: kmax, num_classes, fallback_seed: 0 },
                ),
                name => {
                    let v = name.parse()?;
                    logah::costmodel::variant_configs(v, num_classes)
                }
            };
            let cfg = TrainConfig {
                meta_batch: m,
                mini_batch: n,
                epochs,
                base_lr: lr,
                weight_decay: wd,
                gamma,
                optimizer: match optimizer.as_str() {
                    "sgd" => OptKind::Sgd,
                    _ => OptKind::AdamW,
                },
                seed,
                checkpoint_every,
            };
            let mut trainer = match resume {
                Some(path) => Trainer::from_checkpoint(Checkpoint::load(&path)?),
                None => Trainer::new(enc, dec, cfg)?,
            };
            let rows = trainer.run(&graphs, &task, None, None)?;
            trainer.checkpoint().save(&out)?;
            if let Some(log) = log {
                write_training_log(&rows, std::fs::File::create(&log)?)?;
            }
            let last = rows.last();
            println!(
                "trained {} steps; final task loss {}",
                rows.len(),
                last.map(|r| r.task_loss).unwrap_or(f64::NAN)
            );
            println!("checkpoint: {}", out.display());
        }
        Cmd::Predict { checkpoint, arch, arch_dataset, kind, index, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let spec: ArchSpec = match (arch, arch_dataset) {
                (Some(name), _) => preset_spec(&name)?,
                (None, Some(path)) => {
                    let kind: ArchKind = kind.expect("clap requires --kind").parse()?;
                    let ds = ArchDataset::read_jsonl(std::fs::File::open(&path)?, kind, 0)?;
                    ds.records
                        .get(index)
                        .map(|r| r.config.clone())
                        .ok_or_else(|| LogahError::Config(format!("index {index} out of range")))?
                }
                (None, None) => {
                    return Err(LogahError::Config(
                        "predict needs --arch or --arch-dataset".into(),
                    ))
                }
            };
            let set = write_initialization(&ckpt, &spec, &out)?;
            println!(
                "wrote {} tensors ({} via fallback) to {}",
                set.tensors.len(),
                set.fallback.len(),
                out.display()
            );
            for name in &set.fallback {
                println!("fallback: {name}");
            }
        }
        Cmd::TransferHead { params, num_classes, seed, out } => {
            let set = logah::tensorio::read_archive(&params)?;
            let transferred = transfer_reinit_head(&set, num_classes, seed)?;
            logah::tensorio::write_archive(&transferred, &out)?;
            println!("wrote transferred archive to {}", out.display());
        }
        Cmd::Diversity { params, shape } => {
            let set = logah::tensorio::read_archive(&params)?;
            let shape: Vec<usize> =
                parse_list(&shape)?.into_iter().map(|v| v as usize).collect();
            let report = diversity_report(&set, &shape)?;
            println!("shape: {:?}", report.shape);
            println!("pairs: {}", report.pair_count);
            println!("excluded_zero_norm: {}", report.excluded_zero_norm);
            for (i, p) in report.pairs.iter().enumerate() {
                println!("pair {i}: {p}");
            }
            println!("mean_abs_cos_distance: {}", report.mean_abs_cos_distance);
        }
        Cmd::Recipe { file, workdir } => {
            let stages = parse_recipe(&std::fs::read_to_string(&file)?)?;
            let artifacts = run_recipe(&stages, &workdir)?;
            for a in &artifacts {
                println!("{}  {}", a.sha256, a.path);
            }
            println!("manifest: {}", workdir.join("manifest.txt").display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
