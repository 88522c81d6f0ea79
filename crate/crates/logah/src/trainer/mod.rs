//! End-to-end hypernetwork training: the encoder + decoder pair is fit on a
//! set of target architectures and one task dataset. Each step runs the whole
//! chain on one tape — embed the graph, encode, decode factors, realize the
//! target weights, run the target network on a mini-batch — so gradients of
//! the task loss flow back into the hypernetwork weights.

pub mod target;
pub mod tasks;

use crate::archspace::{ArchRecord, ArchSpec};
use crate::decoder::{
    baseline_tensor, post_scale_factor, realize_folded_tape, DecoderConfig, DecoderVars,
    DecoderWeights, NamedTensor, PredictedParameterSet, TensorSource,
};
use crate::encoder::{EncoderConfig, EncoderVars, EncoderWeights, GraphContext};
use crate::graphir::{build_graph, realize_ndim, CompGraph, OpType};
use crate::tape::{Tape, Var};
use crate::{LogahError, Result};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;
use target::{fold_patch_weight, gpt_logits, parameter_arrays, vit_logits, TargetParams};
use tasks::{TaskBatch, TaskDataset};

/// Optimizer family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptKind {
    AdamW,
    Sgd,
}

/// Hypernetwork training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// architectures per meta-batch
    pub meta_batch: usize,
    /// task samples per mini-batch
    pub mini_batch: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// coefficient of the squared-norm penalty on predicted target weights
    pub gamma: f64,
    pub optimizer: OptKind,
    pub seed: u64,
    /// checkpoint every this many steps (0 = final checkpoint only)
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            meta_batch: 2,
            mini_batch: 4,
            epochs: 1,
            base_lr: 3e-4,
            weight_decay: 1e-2,
            gamma: 3e-5,
            optimizer: OptKind::AdamW,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

/// Cosine annealing from `base` to exactly zero at the final step.
pub fn cosine_lr(base: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps <= 1 {
        return if step == 0 { base } else { 0.0 };
    }
    let t = step.min(total_steps - 1) as f64 / (total_steps - 1) as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// The trainable hypernetwork: graph encoder plus low-rank decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct GhnModel {
    pub encoder: EncoderWeights,
    pub decoder: DecoderWeights,
}

impl GhnModel {
    pub fn init(enc: EncoderConfig, dec: DecoderConfig, seed: u64) -> Result<Self> {
        if enc.d != dec.d {
            return Err(LogahError::Config(format!(
                "encoder width {} != decoder input width {}",
                enc.d, dec.d
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(GhnModel {
            encoder: EncoderWeights::init(enc, &mut rng)?,
            decoder: DecoderWeights::init(dec, &mut rng)?,
        })
    }

    pub fn param_count(&self) -> u64 {
        self.encoder.param_count() + self.decoder.param_count()
    }

    /// Stable name -> matrix view of every trainable array.
    pub fn params(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("encoder.embed_table".into(), &self.encoder.embed_table),
            ("encoder.degree_table".into(), &self.encoder.degree_table),
        ];
        for (i, l) in self.encoder.layers.iter().enumerate() {
            let p = format!("encoder.layers.{i}");
            out.push((format!("{p}.qkv_w"), &l.qkv_w));
            out.push((format!("{p}.qkv_b"), &l.qkv_b));
            out.push((format!("{p}.proj_w"), &l.proj_w));
            out.push((format!("{p}.proj_b"), &l.proj_b));
            out.push((format!("{p}.ln1_scale"), &l.ln1_scale));
            out.push((format!("{p}.ln1_shift"), &l.ln1_shift));
            out.push((format!("{p}.ln2_scale"), &l.ln2_scale));
            out.push((format!("{p}.ln2_shift"), &l.ln2_shift));
            out.push((format!("{p}.fc1_w"), &l.fc1_w));
            out.push((format!("{p}.fc1_b"), &l.fc1_b));
            out.push((format!("{p}.fc2_w"), &l.fc2_w));
            out.push((format!("{p}.fc2_b"), &l.fc2_b));
            out.push((format!("{p}.dist_bias"), &l.dist_bias));
        }
        out.push(("decoder.m1".into(), &self.decoder.m1));
        out.push(("decoder.m2".into(), &self.decoder.m2));
        out.push(("decoder.m3".into(), &self.decoder.m3));
        out.push(("decoder.m4".into(), &self.decoder.m4));
        out
    }

    /// Mutable counterpart of [`GhnModel::params`], same names and order.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> = vec![
            ("encoder.embed_table".into(), &mut self.encoder.embed_table),
            ("encoder.degree_table".into(), &mut self.encoder.degree_table),
        ];
        for (i, l) in self.encoder.layers.iter_mut().enumerate() {
            let p = format!("encoder.layers.{i}");
            out.push((format!("{p}.qkv_w"), &mut l.qkv_w));
            out.push((format!("{p}.qkv_b"), &mut l.qkv_b));
            out.push((format!("{p}.proj_w"), &mut l.proj_w));
            out.push((format!("{p}.proj_b"), &mut l.proj_b));
            out.push((format!("{p}.ln1_scale"), &mut l.ln1_scale));
            out.push((format!("{p}.ln1_shift"), &mut l.ln1_shift));
            out.push((format!("{p}.ln2_scale"), &mut l.ln2_scale));
            out.push((format!("{p}.ln2_shift"), &mut l.ln2_shift));
            out.push((format!("{p}.fc1_w"), &mut l.fc1_w));
            out.push((format!("{p}.fc1_b"), &mut l.fc1_b));
            out.push((format!("{p}.fc2_w"), &mut l.fc2_w));
            out.push((format!("{p}.fc2_b"), &mut l.fc2_b));
            out.push((format!("{p}.dist_bias"), &mut l.dist_bias));
        }
        out.push(("decoder.m1".into(), &mut self.decoder.m1));
        out.push(("decoder.m2".into(), &mut self.decoder.m2));
        out.push(("decoder.m3".into(), &mut self.decoder.m3));
        out.push(("decoder.m4".into(), &mut self.decoder.m4));
        out
    }

    /// Load every weight onto a tape, returning the structured handles plus a
    /// name -> var registry aligned with [`GhnModel::params`].
    pub fn load_vars(&self, tape: &mut Tape) -> (EncoderVars, DecoderVars, Vec<(String, Var)>) {
        let enc = self.encoder.load_vars(tape);
        let dec = self.decoder.load_vars(tape);
        let mut named: Vec<(String, Var)> = vec![
            ("encoder.embed_table".into(), enc.embed_table),
            ("encoder.degree_table".into(), enc.degree_table),
        ];
        for (i, l) in enc.layers.iter().enumerate() {
            let p = format!("encoder.layers.{i}");
            named.push((format!("{p}.qkv_w"), l.qkv_w));
            named.push((format!("{p}.qkv_b"), l.qkv_b));
            named.push((format!("{p}.proj_w"), l.proj_w));
            named.push((format!("{p}.proj_b"), l.proj_b));
            named.push((format!("{p}.ln1_scale"), l.ln1_scale));
            named.push((format!("{p}.ln1_shift"), l.ln1_shift));
            named.push((format!("{p}.ln2_scale"), l.ln2_scale));
            named.push((format!("{p}.ln2_shift"), l.ln2_shift));
            named.push((format!("{p}.fc1_w"), l.fc1_w));
            named.push((format!("{p}.fc1_b"), l.fc1_b));
            named.push((format!("{p}.fc2_w"), l.fc2_w));
            named.push((format!("{p}.fc2_b"), l.fc2_b));
            named.push((format!("{p}.dist_bias"), l.dist_bias));
        }
        named.push(("decoder.m1".into(), dec.m1));
        named.push(("decoder.m2".into(), dec.m2));
        named.push(("decoder.m3".into(), dec.m3));
        named.push(("decoder.m4".into(), dec.m4));
        (enc, dec, named)
    }
}

/// A target architecture with its graph, built once up front.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub spec: ArchSpec,
    pub graph: CompGraph,
}

impl PreparedGraph {
    pub fn new(spec: ArchSpec) -> Result<Self> {
        let graph = build_graph(&spec)?;
        Ok(PreparedGraph { spec, graph })
    }

    pub fn from_records(records: &[ArchRecord]) -> Result<Vec<Self>> {
        records.iter().map(|r| PreparedGraph::new(r.config.clone())).collect()
    }
}

/// Realize every learnable tensor of `graph` on the tape from its factor
/// pair, in target-forward layout. Oversize tensors become constant fallback
/// leaves (no gradient); returns the predicted vars for the norm penalty.
fn realize_target_on_tape(
    tape: &mut Tape,
    graph: &CompGraph,
    factors: &[(Var, Var)],
    cfg: &DecoderConfig,
) -> Result<(TargetParams, Vec<Var>)> {
    let mut vars = BTreeMap::new();
    let mut predicted = Vec::new();
    let (d_patch, p_patch) = match &graph.arch_ref {
        ArchSpec::Vit(v) => (v.hidden_dim, v.patch_size),
        ArchSpec::Gpt(_) => (0, 0),
    };
    for (i, node) in graph.nodes.iter().enumerate() {
        let Some(n_dim) = realize_ndim(node.op, &node.shape) else {
            continue;
        };
        let (m, n) = node.folded_dims();
        let fan_in = node.shape[1] * node.shape[2] * node.shape[3];
        // deterministic baseline, folded into the layout the forward pass uses
        let base_data = baseline_tensor(node, cfg.fallback_seed);
        let base_arr = if node.name == "patch_embed.weight" {
            fold_patch_weight(&base_data, d_patch, p_patch)
        } else if n_dim == 1 {
            Array2::from_shape_vec((1, m), base_data.iter().map(|&v| v as f64).collect())
                .expect("baseline vector")
        } else {
            Array2::from_shape_vec((m, n), base_data.iter().map(|&v| v as f64).collect())
                .expect("baseline matrix")
        };
        if m > cfg.k || n > cfg.k {
            // constant leaf: gradients stop here by construction
            vars.insert(node.name.clone(), tape.leaf(base_arr));
            continue;
        }
        let (a, b) = factors[i];
        let folded = realize_folded_tape(tape, a, b, m, n);
        let scaled = tape.scale(folded, post_scale_factor(fan_in));
        let v = if n_dim == 1 { tape.transpose(scaled) } else { scaled };
        // the magnitude penalty sees the raw residual, before the baseline
        predicted.push(v);
        // realized tensor = baseline + prediction: an untrained predictor then
        // yields a well-conditioned variance-scaled network instead of the
        // degenerate all-zero one, which is a gradient-free attractor
        let base = tape.leaf(base_arr);
        let v = tape.add(v, base);
        vars.insert(node.name.clone(), v);
    }
    Ok((TargetParams { vars }, predicted))
}

fn task_loss_for_graph(
    tape: &mut Tape,
    prepared: &PreparedGraph,
    params: &TargetParams,
    task: &TaskDataset,
    batch: &TaskBatch,
) -> Result<Var> {
    match (&prepared.spec, task, batch) {
        (ArchSpec::Vit(spec), TaskDataset::Images(ds), TaskBatch::Images { indices }) => {
            if ds.height != spec.image_size || ds.width != spec.image_size {
                return Err(LogahError::Config(format!(
                    "image size {}x{} does not match target input {}",
                    ds.height, ds.width, spec.image_size
                )));
            }
            if ds.num_classes != spec.num_classes {
                return Err(LogahError::Config(format!(
                    "dataset has {} classes, target head has {}",
                    ds.num_classes, spec.num_classes
                )));
            }
            let patch_batch: Vec<Array2<f64>> =
                indices.iter().map(|&i| ds.patches(i, spec.patch_size)).collect();
            let labels: Vec<usize> = indices.iter().map(|&i| ds.labels[i]).collect();
            let logits = vit_logits(tape, spec, params, &patch_batch)?;
            Ok(tape.cross_entropy_logits(logits, Arc::new(labels)))
        }
        (ArchSpec::Gpt(spec), TaskDataset::Tokens(ds), TaskBatch::Tokens { start, len }) => {
            if ds.vocab_size != spec.vocab_size {
                return Err(LogahError::Config(format!(
                    "corpus vocab {} does not match target vocab {}",
                    ds.vocab_size, spec.vocab_size
                )));
            }
            let len = (*len).min(spec.context_length);
            let (ctx, tgt) = ds.window(*start, len);
            let logits = gpt_logits(tape, spec, params, &ctx)?;
            Ok(tape.cross_entropy_logits(logits, Arc::new(tgt)))
        }
        _ => Err(LogahError::Config(
            "architecture family and task dataset do not match".into(),
        )),
    }
}

/// One forward (and optionally backward) pass over a meta-batch.
pub struct StepOutcome {
    pub task_loss: f64,
    pub reg_loss: f64,
    pub grads: Option<BTreeMap<String, Array2<f64>>>,
}

/// Run the full chain for each graph in the meta-batch on a single tape.
/// `task_loss` is the mean cross-entropy across graphs, `reg_loss` the mean
/// squared norm of the predicted target weights.
pub fn ghn_step(
    model: &GhnModel,
    graphs: &[PreparedGraph],
    task: &TaskDataset,
    batch: &TaskBatch,
    gamma: f64,
    want_grads: bool,
) -> Result<StepOutcome> {
    if graphs.is_empty() {
        return Err(LogahError::Config("empty meta-batch".into()));
    }
    let mut tape = Tape::new();
    let (enc_vars, dec_vars, named) = model.load_vars(&mut tape);

    let mut ce_terms = Vec::with_capacity(graphs.len());
    let mut reg_terms = Vec::new();
    for prepared in graphs {
        let ctx = GraphContext::new(&prepared.graph, &model.encoder.config);
        let embedded = crate::encoder::embed_nodes_tape(
            &mut tape,
            &prepared.graph,
            enc_vars.embed_table,
            model.encoder.config.d,
        );
        let features = crate::encoder::graphormer_forward_tape(
            &mut tape,
            embedded,
            &ctx,
            &enc_vars,
            &model.encoder.config,
        )?;
        let factors =
            crate::decoder::decode_factors_tape(&mut tape, features, &dec_vars, &model.decoder.config);
        let (params, predicted) =
            realize_target_on_tape(&mut tape, &prepared.graph, &factors, &model.decoder.config)?;
        ce_terms.push(task_loss_for_graph(&mut tape, prepared, &params, task, batch)?);
        for v in predicted {
            reg_terms.push(tape.sum_sq(v));
        }
    }

    let m = graphs.len() as f64;
    let mut task_sum = ce_terms[0];
    for &t in &ce_terms[1..] {
        task_sum = tape.add(task_sum, t);
    }
    let task_mean = tape.scale(task_sum, 1.0 / m);

    let reg_mean = if reg_terms.is_empty() {
        tape.leaf(Array2::zeros((1, 1)))
    } else {
        let mut reg_sum = reg_terms[0];
        for &t in &reg_terms[1..] {
            reg_sum = tape.add(reg_sum, t);
        }
        tape.scale(reg_sum, 1.0 / m)
    };

    let task_loss = tape.value(task_mean)[[0, 0]];
    let reg_loss = tape.value(reg_mean)[[0, 0]];
    if !task_loss.is_finite() || !reg_loss.is_finite() {
        return Err(LogahError::NonFinite {
            context: "training step".into(),
            node: "-".into(),
        });
    }

    let grads = if want_grads {
        let reg_scaled = tape.scale(reg_mean, gamma);
        let loss = tape.add(task_mean, reg_scaled);
        let g = tape.backward(loss);
        Some(
            named
                .iter()
                .map(|(name, v)| (name.clone(), g.grad(&tape, *v)))
                .collect(),
        )
    } else {
        None
    };
    Ok(StepOutcome { task_loss, reg_loss, grads })
}

const GRAD_CLIP_NORM: f64 = 1.0;

/// Rescale gradients in place so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Array2<f64>>, max_norm: f64) {
    let total_sq: f64 = grads.values().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum();
    let norm = total_sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            *g *= s;
        }
    }
}

/// Optimizer state: AdamW moments; SGD keeps its velocity in `m`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptState {
    pub t: u64,
    pub m: BTreeMap<String, Array2<f64>>,
    pub v: BTreeMap<String, Array2<f64>>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const SGD_MOMENTUM: f64 = 0.9;

impl OptState {
    /// Apply one update. AdamW uses decoupled weight decay; SGD uses Polyak
    /// momentum with the same decoupled decay term.
    pub fn apply(
        &mut self,
        model: &mut GhnModel,
        grads: &BTreeMap<String, Array2<f64>>,
        lr: f64,
        weight_decay: f64,
        kind: OptKind,
    ) {
        self.t += 1;
        let t = self.t as i32;
        for (name, p) in model.params_mut() {
            let g = match grads.get(&name) {
                Some(g) => g,
                None => continue,
            };
            match kind {
                OptKind::Sgd => {
                    let buf = self
                        .m
                        .entry(name.clone())
                        .or_insert_with(|| Array2::zeros(p.dim()));
                    *buf = &*buf * SGD_MOMENTUM + g;
                    *p -= &(&self.m[&name] * lr);
                    *p -= &(&*p * (lr * weight_decay));
                }
                OptKind::AdamW => {
                    let m = self
                        .m
                        .entry(name.clone())
                        .or_insert_with(|| Array2::zeros(p.dim()));
                    *m = &*m * ADAM_BETA1 + &(g * (1.0 - ADAM_BETA1));
                    let v = self
                        .v
                        .entry(name.clone())
                        .or_insert_with(|| Array2::zeros(p.dim()));
                    *v = &*v * ADAM_BETA2 + &(g.mapv(|x| x * x) * (1.0 - ADAM_BETA2));
                    let mhat = &self.m[&name] / (1.0 - ADAM_BETA1.powi(t));
                    let vhat = &self.v[&name] / (1.0 - ADAM_BETA2.powi(t));
                    let update = &mhat / &vhat.mapv(|x| x.sqrt() + ADAM_EPS);
                    *p -= &(&update * lr);
                    *p -= &(&*p * (lr * weight_decay));
                }
            }
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub task_loss: f64,
    pub reg_loss: f64,
}

/// CSV with a fixed header: step, epoch, lr, task_loss, reg_loss.
pub fn write_training_log<W: Write>(rows: &[LogRow], mut w: W) -> Result<()> {
    writeln!(w, "step,epoch,lr,task_loss,reg_loss")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.step, r.epoch, r.lr, r.task_loss, r.reg_loss)?;
    }
    Ok(())
}

/// Mutable training state; everything needed to resume bit-exactly.
pub struct Trainer {
    pub model: GhnModel,
    pub opt: OptState,
    pub cfg: TrainConfig,
    pub step: usize,
    rng: ChaCha8Rng,
}

fn mix(a: u64, b: u64) -> u64 {
    crate::archspace::record_seed(a, b, 0x5EED)
}

impl Trainer {
    pub fn new(enc: EncoderConfig, dec: DecoderConfig, cfg: TrainConfig) -> Result<Self> {
        let model = GhnModel::init(enc, dec, cfg.seed)?;
        let rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 1));
        Ok(Trainer { model, opt: OptState::default(), cfg, step: 0, rng })
    }

    pub fn batches_per_epoch(&self, num_graphs: usize) -> usize {
        num_graphs.div_ceil(self.cfg.meta_batch)
    }

    pub fn total_steps(&self, num_graphs: usize) -> usize {
        self.cfg.epochs * self.batches_per_epoch(num_graphs)
    }

    /// Shuffled graph order for one epoch; a pure function of (seed, epoch)
    /// so mid-epoch resume reproduces it.
    fn epoch_order(&self, epoch: usize, num_graphs: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..num_graphs).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, 2 + epoch as u64));
        order.shuffle(&mut rng);
        order
    }

    /// Run up to `max_steps` further steps (None = to the end of the
    /// schedule). Checkpoints land in `ckpt_dir` when configured.
    pub fn run(
        &mut self,
        graphs: &[PreparedGraph],
        task: &TaskDataset,
        max_steps: Option<usize>,
        ckpt_dir: Option<&Path>,
    ) -> Result<Vec<LogRow>> {
        if graphs.is_empty() {
            return Err(LogahError::Config("no training graphs".into()));
        }
        let per_epoch = self.batches_per_epoch(graphs.len());
        let total = self.total_steps(graphs.len());
        let budget = max_steps.unwrap_or(usize::MAX);
        let mut rows = Vec::new();
        let mut done = 0usize;
        while self.step < total && done < budget {
            let epoch = self.step / per_epoch;
            let slot = self.step % per_epoch;
            let order = self.epoch_order(epoch, graphs.len());
            let lo = slot * self.cfg.meta_batch;
            let hi = (lo + self.cfg.meta_batch).min(graphs.len());
            let meta: Vec<PreparedGraph> =
                order[lo..hi].iter().map(|&i| graphs[i].clone()).collect();

            let batch = task.sample_batch(self.cfg.mini_batch, &mut self.rng);
            let lr = cosine_lr(self.cfg.base_lr, self.step, total);
            let out = ghn_step(&self.model, &meta, task, &batch, self.cfg.gamma, true)?;
            let mut grads = out.grads.clone().expect("grads requested");
            clip_grad_norm(&mut grads, GRAD_CLIP_NORM);
            self.opt.apply(
                &mut self.model,
                &grads,
                lr,
                self.cfg.weight_decay,
                self.cfg.optimizer,
            );
            self.step += 1;
            done += 1;
            rows.push(LogRow {
                step: self.step,
                epoch,
                lr,
                task_loss: out.task_loss,
                reg_loss: out.reg_loss,
            });
            if let Some(dir) = ckpt_dir {
                let periodic =
                    self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0;
                if periodic || self.step == total {
                    std::fs::create_dir_all(dir)?;
                    self.checkpoint().save(&dir.join(format!("ckpt_step{}.bin", self.step)))?;
                }
            }
        }
        Ok(rows)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            train_config: self.cfg.clone(),
            rng_seed: mix(self.cfg.seed, 1),
            rng_word_pos: self.rng.get_word_pos(),
            model: self.model.clone(),
            opt: self.opt.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(ckpt.rng_seed);
        rng.set_word_pos(ckpt.rng_word_pos);
        Trainer {
            model: ckpt.model,
            opt: ckpt.opt,
            cfg: ckpt.train_config,
            step: ckpt.step,
            rng,
        }
    }
}

/// Single-file checkpoint: magic + JSON header + raw little-endian f64
/// tensors. Round trips are bit-exact, including optimizer moments and the
/// data-order RNG position.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub train_config: TrainConfig,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    pub model: GhnModel,
    pub opt: OptState,
}

const CKPT_MAGIC: &[u8; 8] = b"LOGAHCK1";
const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CkptHeader {
    version: u32,
    step: usize,
    train_config: TrainConfig,
    encoder_config: EncoderConfig,
    decoder_config: DecoderConfig,
    rng_seed: u64,
    rng_word_pos: String,
    opt_t: u64,
    /// (name, rows, cols) in payload order
    tensors: Vec<(String, usize, usize)>,
}

impl Checkpoint {
    fn tensor_list(&self) -> Vec<(String, Array2<f64>)> {
        let mut out: Vec<(String, Array2<f64>)> = self
            .model
            .params()
            .into_iter()
            .map(|(n, a)| (n, a.clone()))
            .collect();
        for (n, a) in &self.opt.m {
            out.push((format!("opt.m.{n}"), a.clone()));
        }
        for (n, a) in &self.opt.v {
            out.push((format!("opt.v.{n}"), a.clone()));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = self.tensor_list();
        let header = CkptHeader {
            version: CKPT_VERSION,
            step: self.step,
            train_config: self.train_config.clone(),
            encoder_config: self.model.encoder.config,
            decoder_config: self.model.decoder.config,
            rng_seed: self.rng_seed,
            rng_word_pos: self.rng_word_pos.to_string(),
            opt_t: self.opt.t,
            tensors: tensors.iter().map(|(n, a)| (n.clone(), a.nrows(), a.ncols())).collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for (_, a) in &tensors {
            for &x in a.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| LogahError::Checkpoint("file too short".into()))?;
        if &magic != CKPT_MAGIC {
            return Err(LogahError::Checkpoint("bad magic".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header_bytes = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header_bytes)?;
        let header: CkptHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| LogahError::Checkpoint(format!("header: {e}")))?;
        if header.version != CKPT_VERSION {
            return Err(LogahError::Checkpoint(format!(
                "unsupported version {}",
                header.version
            )));
        }
        let rng_word_pos: u128 = header
            .rng_word_pos
            .parse()
            .map_err(|_| LogahError::Checkpoint("bad rng position".into()))?;

        let mut tensors: BTreeMap<String, Array2<f64>> = BTreeMap::new();
        for (name, rows, cols) in &header.tensors {
            let mut bytes = vec![0u8; rows * cols * 8];
            r.read_exact(&mut bytes).map_err(|_| {
                LogahError::Checkpoint(format!("truncated tensor payload at {name}"))
            })?;
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.insert(
                name.clone(),
                Array2::from_shape_vec((*rows, *cols), data)
                    .map_err(|e| LogahError::Checkpoint(format!("{name}: {e}")))?,
            );
        }

        let mut model = GhnModel::init(header.encoder_config, header.decoder_config, 0)?;
        for (name, p) in model.params_mut() {
            let stored = tensors
                .remove(&name)
                .ok_or_else(|| LogahError::Checkpoint(format!("missing tensor {name}")))?;
            if stored.dim() != p.dim() {
                return Err(LogahError::Checkpoint(format!(
                    "tensor {name}: stored {:?}, expected {:?}",
                    stored.dim(),
                    p.dim()
                )));
            }
            *p = stored;
        }
        let mut opt = OptState { t: header.opt_t, ..Default::default() };
        for (name, a) in tensors {
            if let Some(rest) = name.strip_prefix("opt.m.") {
                opt.m.insert(rest.to_string(), a);
            } else if let Some(rest) = name.strip_prefix("opt.v.") {
                opt.v.insert(rest.to_string(), a);
            } else {
                return Err(LogahError::Checkpoint(format!("unexpected tensor {name}")));
            }
        }
        Ok(Checkpoint {
            step: header.step,
            train_config: header.train_config,
            rng_seed: header.rng_seed,
            rng_word_pos,
            model,
            opt,
        })
    }
}

/// Metrics from evaluating one realized network on its task.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    /// top-1 accuracy (image tasks)
    pub accuracy: Option<f64>,
    /// exp(mean cross-entropy) (token tasks)
    pub perplexity: Option<f64>,
}

fn eval_arrays(
    spec: &ArchSpec,
    arrays: &BTreeMap<String, Array2<f64>>,
    task: &TaskDataset,
    eval_samples: usize,
) -> Result<EvalMetrics> {
    let mut tape = Tape::new();
    let params = TargetParams {
        vars: arrays.iter().map(|(n, a)| (n.clone(), tape.leaf(a.clone()))).collect(),
    };
    match (spec, task) {
        (ArchSpec::Vit(s), TaskDataset::Images(ds)) => {
            let n = eval_samples.min(ds.len());
            let patch_batch: Vec<Array2<f64>> =
                (0..n).map(|i| ds.patches(i, s.patch_size)).collect();
            let labels: Vec<usize> = ds.labels[..n].to_vec();
            let logits = vit_logits(&mut tape, s, &params, &patch_batch)?;
            let lv = tape.value(logits).clone();
            let ce = tape.cross_entropy_logits(logits, Arc::new(labels.clone()));
            let correct = lv
                .rows()
                .into_iter()
                .zip(&labels)
                .filter(|(row, &y)| {
                    let best = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    best == y
                })
                .count();
            Ok(EvalMetrics {
                loss: tape.value(ce)[[0, 0]],
                accuracy: Some(correct as f64 / n as f64),
                perplexity: None,
            })
        }
        (ArchSpec::Gpt(s), TaskDataset::Tokens(ds)) => {
            let len = eval_samples.min(s.context_length).min(ds.tokens.len() - 1);
            let (ctx, tgt) = ds.window(0, len);
            let logits = gpt_logits(&mut tape, s, &params, &ctx)?;
            let ce = tape.cross_entropy_logits(logits, Arc::new(tgt));
            let loss = tape.value(ce)[[0, 0]];
            Ok(EvalMetrics { loss, accuracy: None, perplexity: Some(loss.exp()) })
        }
        _ => Err(LogahError::Config(
            "architecture family and task dataset do not match".into(),
        )),
    }
}

/// Evaluate a realized parameter set without touching it.
pub fn evaluate_params(
    spec: &ArchSpec,
    set: &PredictedParameterSet,
    task: &TaskDataset,
    eval_samples: usize,
) -> Result<EvalMetrics> {
    let arrays = parameter_arrays(spec, set)?;
    eval_arrays(spec, &arrays, task, eval_samples)
}

/// Plain-SGD fine-tuning of a realized target network. Returns metrics
/// before and after; `steps == 0` evaluates the initialization twice.
#[allow(clippy::too_many_arguments)]
pub fn finetune_params(
    spec: &ArchSpec,
    set: &PredictedParameterSet,
    task: &TaskDataset,
    steps: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
    eval_samples: usize,
) -> Result<(EvalMetrics, EvalMetrics)> {
    let mut arrays = parameter_arrays(spec, set)?;
    let before = eval_arrays(spec, &arrays, task, eval_samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prepared = PreparedGraph::new(spec.clone())?;
    for _ in 0..steps {
        let batch = task.sample_batch(batch_size, &mut rng);
        let mut tape = Tape::new();
        let named: Vec<(String, Var)> = arrays
            .iter()
            .map(|(n, a)| (n.clone(), tape.leaf(a.clone())))
            .collect();
        let params = TargetParams { vars: named.iter().cloned().collect() };
        let loss = task_loss_for_graph(&mut tape, &prepared, &params, task, &batch)?;
        let grads = tape.backward(loss);
        for (name, v) in &named {
            let g = grads.grad(&tape, *v);
            let arr = arrays.get_mut(name).expect("known name");
            *arr -= &(&g * lr);
        }
    }
    let after = eval_arrays(spec, &arrays, task, eval_samples)?;
    Ok((before, after))
}

/// Conventionally initialized target parameters (Kaiming weights, zero
/// biases, unit layer-norm scales, small-normal embeddings) in the same
/// container the hypernetwork produces, for like-for-like comparisons.
pub fn random_init_params(spec: &ArchSpec, seed: u64) -> Result<PredictedParameterSet> {
    let graph = build_graph(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PredictedParameterSet {
        non_predicted: graph.non_predicted.clone(),
        ..Default::default()
    };
    let embed_dist = Normal::new(0.0f64, 0.02).expect("std > 0");
    for node in &graph.nodes {
        let Some(n_dim) = realize_ndim(node.op, &node.shape) else {
            continue;
        };
        let numel: usize = node.shape.iter().product();
        let data: Vec<f32> = match node.op {
            OpType::LayerNormScale => vec![1.0; numel],
            OpType::LayerNormShift | OpType::Bias => vec![0.0; numel],
            OpType::TokenEmbedding | OpType::PositionalEmbedding => {
                (0..numel).map(|_| embed_dist.sample(&mut rng) as f32).collect()
            }
            _ => {
                let fan_in = (node.shape[1] * node.shape[2] * node.shape[3]).max(1);
                let dist = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("std > 0");
                (0..numel).map(|_| dist.sample(&mut rng) as f32).collect()
            }
        };
        let shape_vec: Vec<usize> = match n_dim {
            1 => vec![node.shape[0]],
            2 => vec![node.shape[0], node.shape[1]],
            _ => node.shape.to_vec(),
        };
        out.tensors.insert(
            node.name.clone(),
            NamedTensor { shape: shape_vec, data, source: TensorSource::Fallback },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::{sample_tiny_vit_spec, GptSpec};
    use tasks::ImageDataset;

    fn tiny_setup(seed: u64) -> (GhnModel, Vec<PreparedGraph>, TaskDataset) {
        let enc = EncoderConfig { d: 16, layers: 1, heads: 2, max_distance: 8 };
        let dec = DecoderConfig { d: 16, r: 4, k: 160, num_classes: 10, fallback_seed: 0 };
        let model = GhnModel::init(enc, dec, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graphs: Vec<PreparedGraph> = (0..3)
            .map(|_| {
                PreparedGraph::new(ArchSpec::Vit(sample_tiny_vit_spec(&mut rng, 10))).unwrap()
            })
            .collect();
        let task = TaskDataset::Images(ImageDataset::synthetic(10, 8, 40, seed));
        (model, graphs, task)
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(3e-4, 0, 100), 3e-4);
        assert!(cosine_lr(3e-4, 99, 100) < 1e-6 * 3e-4);
        assert!((cosine_lr(1.0, 50, 101) - 0.5).abs() < 1e-12);
        // monotone non-increasing
        let mut prev = f64::INFINITY;
        for s in 0..50 {
            let lr = cosine_lr(1.0, s, 50);
            assert!(lr <= prev + 1e-15);
            prev = lr;
        }
    }

    #[test]
    fn param_registry_consistency() {
        let (mut model, _, _) = tiny_setup(0);
        let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = model.params_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        let mut tape = Tape::new();
        let (_, _, named) = model.load_vars(&mut tape);
        let var_names: Vec<String> = named.into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, var_names);
        let total: u64 = model.params().iter().map(|(_, a)| a.len() as u64).sum();
        assert_eq!(total, model.param_count());
    }

    #[test]
    fn adamw_single_step_oracle() {
        // one scalar parameter, hand-computed first AdamW step
        let enc = EncoderConfig { d: 16, layers: 0, heads: 2, max_distance: 8 };
        let dec = DecoderConfig { d: 16, r: 2, k: 16, num_classes: 10, fallback_seed: 0 };
        let mut model = GhnModel::init(enc, dec, 3).unwrap();
        let p0 = model.decoder.m4[[0, 0]];
        let g0 = 0.37;
        let mut grads = BTreeMap::new();
        for (name, p) in model.params() {
            let mut g = Array2::zeros(p.dim());
            if name == "decoder.m4" {
                g[[0, 0]] = g0;
            }
            grads.insert(name, g);
        }
        let (lr, wd) = (1e-2, 1e-1);
        let mut opt = OptState::default();
        opt.apply(&mut model, &grads, lr, wd, OptKind::AdamW);
        // bias-corrected first step: mhat = g, vhat = g^2
        let expect = {
            let step1 = p0 - lr * (g0 / (g0.abs() + ADAM_EPS));
            step1 - lr * wd * step1
        };
        assert!((model.decoder.m4[[0, 0]] - expect).abs() < 1e-12);
        // untouched entries only shrink by the decay term
        let q0 = {
            let fresh = GhnModel::init(
                EncoderConfig { d: 16, layers: 0, heads: 2, max_distance: 8 },
                DecoderConfig { d: 16, r: 2, k: 16, num_classes: 10, fallback_seed: 0 },
                3,
            )
            .unwrap();
            fresh.decoder.m4[[1, 1]]
        };
        assert!((model.decoder.m4[[1, 1]] - q0 * (1.0 - lr * wd)).abs() < 1e-12);
    }

    #[test]
    fn sgd_step_is_descent_rule() {
        let enc = EncoderConfig { d: 16, layers: 0, heads: 2, max_distance: 8 };
        let dec = DecoderConfig { d: 16, r: 2, k: 16, num_classes: 10, fallback_seed: 0 };
        let mut model = GhnModel::init(enc, dec, 4).unwrap();
        let p0 = model.decoder.m1[[2, 3]];
        let mut grads = BTreeMap::new();
        for (name, p) in model.params() {
            let mut g = Array2::zeros(p.dim());
            if name == "decoder.m1" {
                g[[2, 3]] = -1.5;
            }
            grads.insert(name, g);
        }
        let mut opt = OptState::default();
        opt.apply(&mut model, &grads, 0.1, 0.0, OptKind::Sgd);
        assert!((model.decoder.m1[[2, 3]] - (p0 + 0.15)).abs() < 1e-12);
    }

    #[test]
    fn loss_decomposes_into_task_and_penalty() {
        let (model, graphs, task) = tiny_setup(5);
        let batch = TaskBatch::Images { indices: vec![0, 1, 2] };
        let plain = ghn_step(&model, &graphs[..2], &task, &batch, 0.0, false).unwrap();
        let reg = ghn_step(&model, &graphs[..2], &task, &batch, 3e-5, false).unwrap();
        // gamma only enters the gradient root; the reported components match
        assert_eq!(plain.task_loss, reg.task_loss);
        assert_eq!(plain.reg_loss, reg.reg_loss);
        assert!(plain.reg_loss > 0.0);
        assert!(plain.task_loss.is_finite());
    }

    #[test]
    fn step_gradients_match_finite_differences() {
        let (mut model, graphs, task) = tiny_setup(6);
        let batch = TaskBatch::Images { indices: vec![0, 3] };
        let gamma = 3e-5;
        let out = ghn_step(&model, &graphs[..1], &task, &batch, gamma, true).unwrap();
        let grads = out.grads.unwrap();

        let eps = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        // a handful of randomly chosen coordinates across distinct tensors
        let names: Vec<String> = grads.keys().cloned().collect();
        for _ in 0..6 {
            let name = names[rng.gen_range(0..names.len())].clone();
            let (rows, cols) = grads[&name].dim();
            let (i, j) = (rng.gen_range(0..rows), rng.gen_range(0..cols));
            let mut loss_at = |delta: f64| {
                for (n, p) in model.params_mut() {
                    if n == name {
                        p[[i, j]] += delta;
                    }
                }
                let o = ghn_step(&model, &graphs[..1], &task, &batch, gamma, false).unwrap();
                for (n, p) in model.params_mut() {
                    if n == name {
                        p[[i, j]] -= delta;
                    }
                }
                o.task_loss + gamma * o.reg_loss
            };
            let fd = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
            let g = grads[&name][[i, j]];
            assert!(
                (fd - g).abs() <= 1e-3 * (1.0 + fd.abs().max(g.abs())),
                "{name}[{i},{j}]: fd={fd} tape={g}"
            );
        }
    }

    #[test]
    fn short_training_run_reduces_loss() {
        let (_, graphs, task) = tiny_setup(7);
        let enc = EncoderConfig { d: 16, layers: 1, heads: 2, max_distance: 8 };
        let dec = DecoderConfig { d: 16, r: 4, k: 160, num_classes: 10, fallback_seed: 0 };
        let cfg = TrainConfig {
            meta_batch: 2,
            mini_batch: 4,
            epochs: 15,
            base_lr: 5e-3,
            weight_decay: 0.0,
            gamma: 3e-5,
            optimizer: OptKind::AdamW,
            seed: 7,
            checkpoint_every: 0,
        };
        let mut trainer = Trainer::new(enc, dec, cfg).unwrap();
        let rows = trainer.run(&graphs, &task, None, None).unwrap();
        assert_eq!(rows.len(), trainer.total_steps(graphs.len()));
        let head: f64 =
            rows[..4].iter().map(|r| r.task_loss).sum::<f64>() / 4.0;
        let tail: f64 =
            rows[rows.len() - 4..].iter().map(|r| r.task_loss).sum::<f64>() / 4.0;
        assert!(tail < head, "loss did not drop: {head} -> {tail}");
        // final lr reaches zero
        assert!(rows.last().unwrap().lr < 1e-6 * 5e-3);
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact_and_resume_equivalent() {
        let (_, graphs, task) = tiny_setup(8);
        let enc = EncoderConfig { d: 16, layers: 1, heads: 2, max_distance: 8 };
        let dec = DecoderConfig { d: 16, r: 4, k: 160, num_classes: 10, fallback_seed: 0 };
        let cfg = TrainConfig { epochs: 4, seed: 8, ..TrainConfig::default() };
        let mut trainer = Trainer::new(enc, dec, cfg).unwrap();
        trainer.run(&graphs, &task, Some(3), None).unwrap();

        let ckpt = trainer.checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt, loaded);

        // one further step from the live trainer vs from the reloaded one
        trainer.run(&graphs, &task, Some(1), None).unwrap();
        let mut resumed = Trainer::from_checkpoint(loaded);
        resumed.run(&graphs, &task, Some(1), None).unwrap();
        for ((na, a), (nb, b)) in trainer.model.params().iter().zip(resumed.model.params().iter())
        {
            assert_eq!(na, nb);
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{na} diverged after resume");
            }
        }
    }

    #[test]
    fn corrupt_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(LogahError::Checkpoint(_))));
    }

    #[test]
    fn zero_step_finetune_returns_init_metrics() {
        let spec = ArchSpec::Vit(sample_tiny_vit_spec(
            &mut ChaCha8Rng::seed_from_u64(9),
            10,
        ));
        let set = random_init_params(&spec, 9).unwrap();
        let task = TaskDataset::Images(ImageDataset::synthetic(10, 8, 20, 9));
        let (before, after) =
            finetune_params(&spec, &set, &task, 0, 1e-2, 4, 9, 16).unwrap();
        assert_eq!(before, after);
        let eval = evaluate_params(&spec, &set, &task, 16).unwrap();
        assert_eq!(eval, before);
    }

    #[test]
    fn finetune_improves_image_loss() {
        let spec = ArchSpec::Vit(sample_tiny_vit_spec(
            &mut ChaCha8Rng::seed_from_u64(10),
            10,
        ));
        let set = random_init_params(&spec, 10).unwrap();
        let task = TaskDataset::Images(ImageDataset::synthetic(10, 8, 40, 10));
        let (before, after) =
            finetune_params(&spec, &set, &task, 40, 5e-2, 8, 10, 24).unwrap();
        assert!(after.loss < before.loss, "{} -> {}", before.loss, after.loss);
    }

    #[test]
    fn untrained_gpt_with_zero_embeddings_scores_vocab_perplexity() {
        // zero embeddings and zero head weights give uniform logits, so the
        // model is exactly the uniform predictor: perplexity == vocab size
        let spec = GptSpec {
            num_layers: 1,
            num_heads: 2,
            embed_dim: 16,
            vocab_size: 11,
            context_length: 16,
            tie_word_embeddings: true,
        };
        let arch = ArchSpec::Gpt(spec);
        let mut set = random_init_params(&arch, 11).unwrap();
        for t in set.tensors.values_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        // layer norms need their scales back so activations stay defined
        for (name, t) in set.tensors.iter_mut() {
            if name.ends_with("ln1.weight") || name.ends_with("ln2.weight") || name == "ln_f.weight"
            {
                t.data.iter_mut().for_each(|v| *v = 1.0);
            }
        }
        let task = TaskDataset::Tokens(tasks::TokenDataset::synthetic(11, 200, 11));
        let m = evaluate_params(&arch, &set, &task, 16).unwrap();
        let ppl = m.perplexity.unwrap();
        assert!((ppl - 11.0).abs() < 1e-9, "ppl {ppl}");
    }

    #[test]
    fn gpt_training_step_runs_on_small_vocab() {
        let enc = EncoderConfig { d: 16, layers: 1, heads: 2, max_distance: 8 };
        let dec = DecoderConfig { d: 16, r: 4, k: 160, num_classes: 10, fallback_seed: 0 };
        let model = GhnModel::init(enc, dec, 12).unwrap();
        let spec = GptSpec {
            num_layers: 2,
            num_heads: 2,
            embed_dim: 16,
            vocab_size: 40,
            context_length: 16,
            tie_word_embeddings: false,
        };
        let graphs = vec![PreparedGraph::new(ArchSpec::Gpt(spec)).unwrap()];
        let task = TaskDataset::Tokens(tasks::TokenDataset::synthetic(40, 300, 12));
        let batch = TaskBatch::Tokens { start: 5, len: 8 };
        let out = ghn_step(&model, &graphs, &task, &batch, 3e-5, true).unwrap();
        assert!(out.task_loss.is_finite());
        assert!(out.grads.unwrap().values().any(|g| g.iter().any(|&v| v != 0.0)));
    }
}
