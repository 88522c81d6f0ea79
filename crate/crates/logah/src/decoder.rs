//! Low-rank decoder: node features -> per-node factor pairs (A, B) through a
//! 4-layer MLP chain, target tensors realized by slicing the factors and
//! multiplying. Includes the tiled fixed-block baseline decoder for
//! comparison.
//!
//! The factor chain per node row `h` (width d):
//!   x  = M3(relu(M2(relu(M1 h))))            shape 2r^2
//!   x  = reshape(x, 2r x r); relu            row-major
//!   w  = x . M4                              shape 2r x K
//!   v  = reinterpret(w, 2K x r)              row-major memory view, NOT a
//!                                            transpose
//!   A  = v[0..K], B = v[K..2K]^T
//!
//! A target with folded dims (m, n) is realized as A[..m] . B[..n columns].

use crate::encoder::NodeFeatureMatrix;
use crate::graphir::{realize_ndim, CompGraph, GraphNode, OpType};
use crate::tape::{Tape, Var};
use crate::{LogahError, Result};
use ndarray::{s, Array1, Array2, ArrayD, IxDyn};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Decoder hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// input feature width
    pub d: usize,
    /// low rank
    pub r: usize,
    /// max mask: per-side folded-dimension budget
    pub k: usize,
    /// output count for classification heads
    pub num_classes: usize,
    /// seed for the variance-scaled fallback initialization of tensors the
    /// factors cannot cover
    pub fallback_seed: u64,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.k == 0 || self.d == 0 {
            return Err(LogahError::Config("decoder d, r, K must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-node factor pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    /// K x r
    pub a: Array2<f64>,
    /// r x K
    pub b: Array2<f64>,
}

/// The four MLP matrices. No biases: the scalar count is exactly
/// `4d^2 + 32d^2 + 8d*2r^2 + r*K`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    pub config: DecoderConfig,
    /// d x 4d
    pub m1: Array2<f64>,
    /// 4d x 8d
    pub m2: Array2<f64>,
    /// 8d x 2r^2
    pub m3: Array2<f64>,
    /// r x K
    pub m4: Array2<f64>,
}

/// Shapes of the four matrices for a config, without allocating them.
pub fn decoder_shape_plan(config: &DecoderConfig) -> [(usize, usize); 4] {
    let (d, r, k) = (config.d, config.r, config.k);
    [(d, 4 * d), (4 * d, 8 * d), (8 * d, 2 * r * r), (r, k)]
}

impl DecoderWeights {
    pub fn init(config: DecoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let [s1, s2, s3, s4] = decoder_shape_plan(&config);
        let gen = |rng: &mut ChaCha8Rng, (rows, cols): (usize, usize)| {
            let dist = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("std > 0");
            Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
        };
        Ok(DecoderWeights {
            config,
            m1: gen(rng, s1),
            m2: gen(rng, s2),
            m3: gen(rng, s3),
            m4: gen(rng, s4),
        })
    }

    /// Scalar count of the constructed matrices.
    pub fn param_count(&self) -> u64 {
        (self.m1.len() + self.m2.len() + self.m3.len() + self.m4.len()) as u64
    }
}

/// Tape handles for the decoder matrices.
pub struct DecoderVars {
    pub m1: Var,
    pub m2: Var,
    pub m3: Var,
    pub m4: Var,
}

impl DecoderWeights {
    pub fn load_vars(&self, tape: &mut Tape) -> DecoderVars {
        DecoderVars {
            m1: tape.leaf(self.m1.clone()),
            m2: tape.leaf(self.m2.clone()),
            m3: tape.leaf(self.m3.clone()),
            m4: tape.leaf(self.m4.clone()),
        }
    }
}

/// Factor pair for every node row, on tape (gradients flow into the Ms).
pub fn decode_factors_tape(
    tape: &mut Tape,
    features: Var,
    vars: &DecoderVars,
    config: &DecoderConfig,
) -> Vec<(Var, Var)> {
    let (r, k) = (config.r, config.k);
    let h1 = tape.matmul(features, vars.m1);
    let h1 = tape.relu(h1);
    let h2 = tape.matmul(h1, vars.m2);
    let h2 = tape.relu(h2);
    let x = tape.matmul(h2, vars.m3); // |V| x 2r^2, no final activation
    let n = tape.value(features).nrows();
    (0..n)
        .map(|i| {
            let row = tape.slice_rows(x, i, i + 1);
            let blk = tape.reshape(row, (2 * r, r));
            let blk = tape.relu(blk);
            let w = tape.matmul(blk, vars.m4); // 2r x K
            let v = tape.reshape(w, (2 * k, r)); // row-major reinterpretation
            let a = tape.slice_rows(v, 0, k);
            let bt = tape.slice_rows(v, k, 2 * k);
            let b = tape.transpose(bt);
            (a, b)
        })
        .collect()
}

/// Plain factor decode for all nodes. Memory scales as `|V| * 2 * K * r`; use
/// [`predict_all`] for large graphs, which realizes node by node.
pub fn decode_factors(
    features: &NodeFeatureMatrix,
    weights: &DecoderWeights,
) -> Result<Vec<LowRankFactors>> {
    if features.values.ncols() != weights.config.d {
        return Err(LogahError::Config(format!(
            "feature width {} != decoder d {}",
            features.values.ncols(),
            weights.config.d
        )));
    }
    let mut out = Vec::with_capacity(features.values.nrows());
    for (i, row) in features.values.rows().into_iter().enumerate() {
        let f = factors_for_row(&row.to_owned(), weights);
        if f.a.iter().chain(f.b.iter()).any(|v| !v.is_finite()) {
            return Err(LogahError::NonFinite {
                context: "decode_factors".into(),
                node: i.to_string(),
            });
        }
        out.push(f);
    }
    Ok(out)
}

/// One node's factors, straight ndarray (the oracle-checked equivalent of the
/// tape path).
pub fn factors_for_row(row: &Array1<f64>, weights: &DecoderWeights) -> LowRankFactors {
    let (r, k) = (weights.config.r, weights.config.k);
    let h1 = row.dot(&weights.m1).mapv(|v| v.max(0.0));
    let h2 = h1.dot(&weights.m2).mapv(|v| v.max(0.0));
    let x = h2.dot(&weights.m3); // 2r^2
    let blk = x
        .into_shape_with_order((2 * r, r))
        .expect("2r^2 reshape")
        .mapv(|v| v.max(0.0));
    let w = blk.dot(&weights.m4); // 2r x K
    let v = w.into_shape_with_order((2 * k, r)).expect("row-major reinterpret");
    let a = v.slice(s![..k, ..]).to_owned();
    let b = v.slice(s![k.., ..]).t().to_owned();
    LowRankFactors { a, b }
}

/// Slice the factors to a target shape and multiply.
///
/// `n_dim=4`: returns `(c_out, c_in, k_out, k_in)` (folded axes unswapped
/// from `(c_out, k_out, c_in, k_in)`); `n_dim=2`: the folded matrix as-is;
/// `n_dim=1`: a length-`c_out` vector (requires the other dims degenerate).
pub fn realize_tensor(
    factors: &LowRankFactors,
    max_shape: (usize, usize, usize, usize),
    n_dim: u8,
) -> Result<ArrayD<f64>> {
    let (c_out, c_in, k_out, k_in) = max_shape;
    let k = factors.a.nrows();
    let m = c_out * k_out;
    let n = c_in * k_in;
    if m > k || n > k {
        return Err(LogahError::Oversize {
            name: String::new(),
            dim: m.max(n),
            k,
        });
    }
    // plain-order accumulation: keeps every element bit-identical to a naive
    // index-loop computation, independent of BLAS-style blocking
    let a = factors.a.slice(s![..m, ..]);
    let b = factors.b.slice(s![.., ..n]);
    let r = factors.a.ncols();
    let mut w = Array2::<f64>::zeros((m, n));
    for i in 0..m {
        for t in 0..r {
            let av = a[[i, t]];
            for j in 0..n {
                w[[i, j]] += av * b[[t, j]];
            }
        }
    }
    match n_dim {
        1 => {
            if c_in != 1 || k_out != 1 || k_in != 1 {
                return Err(LogahError::ShapeContract(format!(
                    "n_dim=1 requires degenerate trailing dims, got {max_shape:?}"
                )));
            }
            Ok(w.into_shape_with_order(IxDyn(&[c_out])).expect("vector"))
        }
        2 => Ok(w.into_dyn()),
        4 => {
            let w4 = w
                .into_shape_with_order((c_out, k_out, c_in, k_in))
                .expect("fold split");
            Ok(w4.permuted_axes([0, 2, 1, 3]).as_standard_layout().to_owned().into_dyn())
        }
        other => Err(LogahError::ShapeContract(format!("n_dim must be 1, 2 or 4, got {other}"))),
    }
}

/// Tape realization of the folded matrix `A[..m] . B[:, ..n]`.
pub fn realize_folded_tape(tape: &mut Tape, a: Var, b: Var, m: usize, n: usize) -> Var {
    let a = tape.slice_rows(a, 0, m);
    let b = tape.slice_cols(b, 0, n);
    tape.matmul(a, b)
}

/// Post-realization normalization applied to predicted tensors.
pub fn post_scale_factor(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

/// Where a realized tensor came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorSource {
    Predicted,
    Fallback,
}

/// One realized tensor, stored as little-endian-friendly f32.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub source: TensorSource,
}

/// Realized parameters for a whole target network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictedParameterSet {
    pub tensors: BTreeMap<String, NamedTensor>,
    /// Names of tensors routed to the fallback initializer.
    pub fallback: Vec<String>,
    /// Non-learnable tensors left at framework defaults.
    pub non_predicted: Vec<String>,
}

impl PredictedParameterSet {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.get(name)
    }
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a, stable across runs
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Variance-scaled random values for tensors the factors cannot cover.
pub fn fallback_tensor(name: &str, shape: &[usize; 4], seed: u64) -> Vec<f32> {
    let numel: usize = shape.iter().product();
    let fan_in = (shape[1] * shape[2] * shape[3]).max(1);
    let dist = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("std > 0");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
    (0..numel).map(|_| dist.sample(&mut rng) as f32).collect()
}

/// Deterministic per-tensor baseline every prediction is added to: unit gain
/// for layer-norm scales, zero for shifts and biases, variance-scaled random
/// values for everything else. Treating predictions as residuals on this
/// baseline keeps the realized network well-conditioned even when the
/// predictor outputs are near zero; a plain additive decode has a degenerate
/// attractor there (all-zero weights give uniform logits and no gradient).
pub fn baseline_tensor(node: &GraphNode, seed: u64) -> Vec<f32> {
    let numel: usize = node.shape.iter().product();
    match node.op {
        OpType::LayerNormScale => vec![1.0; numel],
        OpType::LayerNormShift | OpType::Bias => vec![0.0; numel],
        _ => fallback_tensor(&node.name, &node.shape, seed),
    }
}

/// Realize every learnable node of `graph` at its target shape, applying
/// 1/sqrt(fan_in) post-scaling. Tensors whose folded dims exceed K fall back
/// to variance-scaled random values and are reported. Works node by node so
/// memory stays bounded by one factor pair.
pub fn predict_all(
    graph: &CompGraph,
    features: &NodeFeatureMatrix,
    weights: &DecoderWeights,
    cfg: &DecoderConfig,
) -> Result<PredictedParameterSet> {
    cfg.validate()?;
    if features.values.nrows() != graph.num_nodes() {
        return Err(LogahError::Config(format!(
            "feature rows {} != graph nodes {}",
            features.values.nrows(),
            graph.num_nodes()
        )));
    }
    let mut out = PredictedParameterSet {
        non_predicted: graph.non_predicted.clone(),
        ..Default::default()
    };
    for (i, node) in graph.nodes.iter().enumerate() {
        let Some(n_dim) = realize_ndim(node.op, &node.shape) else {
            continue;
        };
        let (m, n) = node.folded_dims();
        let shape_vec: Vec<usize> = match n_dim {
            1 => vec![node.shape[0]],
            2 => vec![node.shape[0], node.shape[1]],
            _ => node.shape.to_vec(),
        };
        if m > cfg.k || n > cfg.k {
            let data = baseline_tensor(node, cfg.fallback_seed);
            out.fallback.push(node.name.clone());
            out.tensors.insert(
                node.name.clone(),
                NamedTensor { shape: shape_vec, data, source: TensorSource::Fallback },
            );
            continue;
        }
        let row = features.values.row(i).to_owned();
        let factors = factors_for_row(&row, weights);
        let max_shape = (node.shape[0], node.shape[1], node.shape[2], node.shape[3]);
        let tensor = realize_tensor(&factors, max_shape, n_dim).map_err(|e| match e {
            LogahError::Oversize { dim, k, .. } => LogahError::Oversize {
                name: node.name.clone(),
                dim,
                k,
            },
            other => other,
        })?;
        let fan_in = node.shape[1] * node.shape[2] * node.shape[3];
        let scale = post_scale_factor(fan_in);
        let base = baseline_tensor(node, cfg.fallback_seed);
        let data: Vec<f32> = tensor
            .iter()
            .zip(&base)
            .map(|(&v, &b)| (v * scale) as f32 + b)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LogahError::NonFinite {
                context: "predict_all".into(),
                node: node.name.clone(),
            });
        }
        out.tensors.insert(
            node.name.clone(),
            NamedTensor { shape: shape_vec, data, source: TensorSource::Predicted },
        );
    }
    Ok(out)
}

/// Fixed-block baseline weights: a single linear map from the feature row to
/// a `d x d x 16 x 16` block, which is then tiled/sliced to the target shape.
#[derive(Debug, Clone)]
pub struct Ghn3BaselineWeights {
    pub d: usize,
    /// d x (d*d*256)
    pub w: Array2<f64>,
}

impl Ghn3BaselineWeights {
    pub fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let dist = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("std > 0");
        Ghn3BaselineWeights {
            d,
            w: Array2::from_shape_fn((d, d * d * 256), |_| dist.sample(rng)),
        }
    }
}

/// Tile the predicted block along the channel axes to cover the target, then
/// slice to exact dims; spatial dims come from the top-left of the 16x16 face.
pub fn ghn3_decode_baseline(
    feature_row: &Array1<f64>,
    weights: &Ghn3BaselineWeights,
    target_shape: (usize, usize, usize, usize),
) -> Result<ArrayD<f64>> {
    let d = weights.d;
    let (c_out, c_in, h, w) = target_shape;
    if h > 16 || w > 16 {
        return Err(LogahError::ShapeContract(format!(
            "baseline spatial face is 16x16, target wants {h}x{w}"
        )));
    }
    let flat = feature_row.dot(&weights.w);
    let block = flat
        .into_shape_with_order((d, d, 16, 16))
        .expect("block reshape");
    let mut out = ArrayD::zeros(IxDyn(&[c_out, c_in, h, w]));
    for co in 0..c_out {
        for ci in 0..c_in {
            for i in 0..h {
                for j in 0..w {
                    out[[co, ci, i, j]] = block[[co % d, ci % d, i, j]];
                }
            }
        }
    }
    Ok(out)
}
