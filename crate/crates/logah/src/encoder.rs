//! Graph encoder: one-hot op embedding followed by Graphormer-style
//! attention layers whose logits carry a learned bias indexed by the clipped
//! shortest-path distance between nodes. Degree (in+out) embeddings are added
//! to the input features before the first layer.

use crate::graphir::{CompGraph, UNREACHABLE, OP_VOCAB};
use crate::tape::{Tape, Var};
use crate::{LogahError, Result};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Degrees are clipped into this many embedding rows.
pub const DEGREE_BINS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// feature width
    pub d: usize,
    /// Graphormer layer count
    pub layers: usize,
    /// attention heads
    pub heads: usize,
    /// shortest-path distances are clipped here; one extra bin holds
    /// unreachable pairs
    pub max_distance: u32,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(LogahError::Config(format!(
                "encoder d={} must be a positive multiple of heads={}",
                self.d, self.heads
            )));
        }
        Ok(())
    }

    pub fn distance_bins(&self) -> usize {
        self.max_distance as usize + 2
    }
}

/// Per-node feature rows at some encoder depth.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureMatrix {
    pub values: Array2<f64>,
    pub layer_index: usize,
}

/// Weights of one Graphormer layer. Linear weights are stored input-major
/// (`in × out`) so forward is a plain right-multiplication.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerWeights {
    pub qkv_w: Array2<f64>,
    pub qkv_b: Array2<f64>,
    pub proj_w: Array2<f64>,
    pub proj_b: Array2<f64>,
    pub ln1_scale: Array2<f64>,
    pub ln1_shift: Array2<f64>,
    pub ln2_scale: Array2<f64>,
    pub ln2_shift: Array2<f64>,
    pub fc1_w: Array2<f64>,
    pub fc1_b: Array2<f64>,
    pub fc2_w: Array2<f64>,
    pub fc2_b: Array2<f64>,
    /// heads × distance_bins learned attention-bias scalars
    pub dist_bias: Array2<f64>,
}

/// Full encoder parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    /// |OpType| × d one-hot embedding table
    pub embed_table: Array2<f64>,
    /// DEGREE_BINS × d degree embedding table
    pub degree_table: Array2<f64>,
    pub layers: Vec<EncoderLayerWeights>,
}

fn fan_in_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("std > 0");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

impl EncoderWeights {
    /// Fan-in-scaled random initialization.
    pub fn init(config: EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let layers = (0..config.layers)
            .map(|_| EncoderLayerWeights {
                qkv_w: fan_in_normal(rng, d, 3 * d, d),
                qkv_b: Array2::zeros((1, 3 * d)),
                proj_w: fan_in_normal(rng, d, d, d),
                proj_b: Array2::zeros((1, d)),
                ln1_scale: Array2::ones((1, d)),
                ln1_shift: Array2::zeros((1, d)),
                ln2_scale: Array2::ones((1, d)),
                ln2_shift: Array2::zeros((1, d)),
                fc1_w: fan_in_normal(rng, d, 4 * d, d),
                fc1_b: Array2::zeros((1, 4 * d)),
                fc2_w: fan_in_normal(rng, 4 * d, d, 4 * d),
                fc2_b: Array2::zeros((1, d)),
                dist_bias: Array2::zeros((config.heads, config.distance_bins())),
            })
            .collect();
        Ok(EncoderWeights {
            config,
            embed_table: fan_in_normal(rng, OP_VOCAB.len(), d, d),
            degree_table: fan_in_normal(rng, DEGREE_BINS, d, d),
            layers,
        })
    }

    /// Exact scalar count of this parameter set.
    pub fn param_count(&self) -> u64 {
        let mut total = (self.embed_table.len() + self.degree_table.len()) as u64;
        for l in &self.layers {
            total += (l.qkv_w.len()
                + l.qkv_b.len()
                + l.proj_w.len()
                + l.proj_b.len()
                + l.ln1_scale.len()
                + l.ln1_shift.len()
                + l.ln2_scale.len()
                + l.ln2_shift.len()
                + l.fc1_w.len()
                + l.fc1_b.len()
                + l.fc2_w.len()
                + l.fc2_b.len()
                + l.dist_bias.len()) as u64;
        }
        total
    }

    /// Closed-form count for a config, without constructing weights.
    pub fn param_count_for(config: &EncoderConfig) -> u64 {
        let d = config.d as u64;
        let h = config.heads as u64;
        let bins = config.distance_bins() as u64;
        let vocab = OP_VOCAB.len() as u64;
        let per_layer = (d * 3 * d + 3 * d) + (d * d + d) + 4 * d + (d * 4 * d + 4 * d) + (4 * d * d + d) + h * bins;
        (vocab + DEGREE_BINS as u64) * d + config.layers as u64 * per_layer
    }
}

/// Tape handles for encoder weights.
pub struct EncoderVars {
    pub embed_table: Var,
    pub degree_table: Var,
    pub layers: Vec<LayerVars>,
}

pub struct LayerVars {
    pub qkv_w: Var,
    pub qkv_b: Var,
    pub proj_w: Var,
    pub proj_b: Var,
    pub ln1_scale: Var,
    pub ln1_shift: Var,
    pub ln2_scale: Var,
    pub ln2_shift: Var,
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
    pub dist_bias: Var,
}

impl EncoderWeights {
    pub fn load_vars(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            embed_table: tape.leaf(self.embed_table.clone()),
            degree_table: tape.leaf(self.degree_table.clone()),
            layers: self
                .layers
                .iter()
                .map(|l| LayerVars {
                    qkv_w: tape.leaf(l.qkv_w.clone()),
                    qkv_b: tape.leaf(l.qkv_b.clone()),
                    proj_w: tape.leaf(l.proj_w.clone()),
                    proj_b: tape.leaf(l.proj_b.clone()),
                    ln1_scale: tape.leaf(l.ln1_scale.clone()),
                    ln1_shift: tape.leaf(l.ln1_shift.clone()),
                    ln2_scale: tape.leaf(l.ln2_scale.clone()),
                    ln2_shift: tape.leaf(l.ln2_shift.clone()),
                    fc1_w: tape.leaf(l.fc1_w.clone()),
                    fc1_b: tape.leaf(l.fc1_b.clone()),
                    fc2_w: tape.leaf(l.fc2_w.clone()),
                    fc2_b: tape.leaf(l.fc2_b.clone()),
                    dist_bias: tape.leaf(l.dist_bias.clone()),
                })
                .collect(),
        }
    }
}

/// Precomputed per-graph lookup indices: degree rows and per-head flattened
/// distance-bias positions. Pure function of the graph and config.
pub struct GraphContext {
    pub num_nodes: usize,
    /// gather map producing the |V|×d degree embedding rows
    degree_idx: Arc<Vec<usize>>,
    /// per head, gather map producing the |V|×|V| bias matrix
    bias_idx: Vec<Arc<Vec<usize>>>,
}

impl GraphContext {
    pub fn new(graph: &CompGraph, config: &EncoderConfig) -> Self {
        let n = graph.num_nodes();
        let d = config.d;
        let degrees = graph.degrees();
        let mut degree_idx = Vec::with_capacity(n * d);
        for &deg in &degrees {
            let row = deg.min(DEGREE_BINS - 1);
            degree_idx.extend((0..d).map(|c| row * d + c));
        }
        let dist = graph.shortest_path_distances();
        let bins = config.distance_bins();
        let bias_idx = (0..config.heads)
            .map(|h| {
                let mut idx = Vec::with_capacity(n * n);
                for row in &dist {
                    for &dv in row {
                        let bin = if dv == UNREACHABLE {
                            bins - 1
                        } else {
                            (dv.min(config.max_distance)) as usize
                        };
                        idx.push(h * bins + bin);
                    }
                }
                Arc::new(idx)
            })
            .collect();
        GraphContext {
            num_nodes: n,
            degree_idx: Arc::new(degree_idx),
            bias_idx,
        }
    }
}

/// Row lookup of the op-embedding table for every node.
pub fn embed_nodes_tape(tape: &mut Tape, graph: &CompGraph, table: Var, d: usize) -> Var {
    let idx: Vec<usize> = graph
        .nodes
        .iter()
        .flat_map(|n| {
            let row = n.op.index();
            (0..d).map(move |c| row * d + c)
        })
        .collect();
    tape.gather(table, Arc::new(idx), (graph.num_nodes(), d))
}

/// Plain entry point for [`embed_nodes_tape`].
pub fn embed_nodes(graph: &CompGraph, table: &Array2<f64>) -> NodeFeatureMatrix {
    let mut tape = Tape::new();
    let t = tape.leaf(table.clone());
    let out = embed_nodes_tape(&mut tape, graph, t, table.ncols());
    NodeFeatureMatrix {
        values: tape.value(out).clone(),
        layer_index: 1,
    }
}

/// L rounds of biased self-attention + feed-forward, post-norm.
/// With `layers == 0` the features pass through untouched.
pub fn graphormer_forward_tape(
    tape: &mut Tape,
    features: Var,
    ctx: &GraphContext,
    vars: &EncoderVars,
    config: &EncoderConfig,
) -> Result<Var> {
    if vars.layers.is_empty() {
        return Ok(features);
    }
    let n = ctx.num_nodes;
    let d = config.d;
    let dh = d / config.heads;
    let eps = 1e-6;

    let degree = tape.gather(vars.degree_table, ctx.degree_idx.clone(), (n, d));
    let mut x = tape.add(features, degree);

    for (li, layer) in vars.layers.iter().enumerate() {
        // multi-head self-attention with distance bias
        let qkv = tape.matmul(x, layer.qkv_w);
        let qkv = tape.add_row(qkv, layer.qkv_b);
        let mut heads = Vec::with_capacity(config.heads);
        for h in 0..config.heads {
            let q = tape.slice_cols(qkv, h * dh, (h + 1) * dh);
            let k = tape.slice_cols(qkv, d + h * dh, d + (h + 1) * dh);
            let v = tape.slice_cols(qkv, 2 * d + h * dh, 2 * d + (h + 1) * dh);
            let kt = tape.transpose(k);
            let logits = tape.matmul(q, kt);
            let logits = tape.scale(logits, 1.0 / (dh as f64).sqrt());
            let bias = tape.gather(layer.dist_bias, ctx.bias_idx[h].clone(), (n, n));
            let logits = tape.add(logits, bias);
            let attn = tape.softmax_rows(logits);
            heads.push(tape.matmul(attn, v));
        }
        let merged = tape.concat_cols(&heads);
        let proj = tape.matmul(merged, layer.proj_w);
        let proj = tape.add_row(proj, layer.proj_b);

        let res = tape.add(x, proj);
        let normed = tape.layer_norm_rows(res, eps);
        let normed = tape.mul_row(normed, layer.ln1_scale);
        x = tape.add_row(normed, layer.ln1_shift);

        // feed-forward
        let h1 = tape.matmul(x, layer.fc1_w);
        let h1 = tape.add_row(h1, layer.fc1_b);
        let h1 = tape.relu(h1);
        let h2 = tape.matmul(h1, layer.fc2_w);
        let h2 = tape.add_row(h2, layer.fc2_b);

        let res = tape.add(x, h2);
        let normed = tape.layer_norm_rows(res, eps);
        let normed = tape.mul_row(normed, layer.ln2_scale);
        x = tape.add_row(normed, layer.ln2_shift);

        if tape.value(x).iter().any(|v| !v.is_finite()) {
            return Err(LogahError::NonFinite {
                context: format!("encoder layer {li}"),
                node: "-".into(),
            });
        }
    }
    Ok(x)
}

/// Plain (non-training) forward pass.
pub fn graphormer_forward(
    features: &NodeFeatureMatrix,
    graph: &CompGraph,
    weights: &EncoderWeights,
) -> Result<NodeFeatureMatrix> {
    weights.config.validate()?;
    if features.values.ncols() != weights.config.d {
        return Err(LogahError::Config(format!(
            "feature width {} != encoder d {}",
            features.values.ncols(),
            weights.config.d
        )));
    }
    let mut tape = Tape::new();
    let vars = weights.load_vars(&mut tape);
    let f = tape.leaf(features.values.clone());
    let ctx = GraphContext::new(graph, &weights.config);
    let out = graphormer_forward_tape(&mut tape, f, &ctx, &vars, &weights.config)?;
    Ok(NodeFeatureMatrix {
        values: tape.value(out).clone(),
        layer_index: weights.config.layers.max(1),
    })
}

/// Embed + encode in one call.
pub fn encode_graph(graph: &CompGraph, weights: &EncoderWeights) -> Result<NodeFeatureMatrix> {
    let embedded = embed_nodes(graph, &weights.embed_table);
    graphormer_forward(&embedded, graph, weights)
}
