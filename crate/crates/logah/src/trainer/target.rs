//! Functional target-network forward passes. Target parameters live on the
//! tape as named vars, so the same code serves three callers: hypernetwork
//! training (params realized from factors, gradients flowing back into the
//! hypernetwork), fine-tuning (params are leaves being optimized), and plain
//! evaluation.
//!
//! Layout conventions for the named vars:
//! - linear weights: folded `(out, in)` matrices,
//! - `patch_embed.weight`: folded `(D*p, 3*p)` as realized from the factors,
//! - embeddings: `(rows, D)`, vectors: `(1, n)`.

use crate::archspace::{ArchSpec, GptSpec, ViTSpec};
use crate::decoder::PredictedParameterSet;
use crate::tape::{Tape, Var};
use crate::{LogahError, Result};
use ndarray::Array2;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Named parameter handles for one target network.
#[derive(Debug, Clone, Default)]
pub struct TargetParams {
    pub vars: BTreeMap<String, Var>,
}

impl TargetParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| LogahError::MissingTensor(name.to_string()))
    }
}

/// Index map that turns the folded `(D*p, 3*p)` patch weight into the
/// `(3*p*p, D)` matrix applied to flattened patches.
pub fn patch_unfold_idx(d: usize, p: usize) -> Vec<usize> {
    let cols = 3 * p;
    let mut idx = Vec::with_capacity(3 * p * p * d);
    for ch in 0..3 {
        for dy in 0..p {
            for dx in 0..p {
                for co in 0..d {
                    idx.push((co * p + dy) * cols + (ch * p + dx));
                }
            }
        }
    }
    idx
}

fn layer_norm_affine(tape: &mut Tape, x: Var, scale: Var, shift: Var) -> Var {
    let n = tape.layer_norm_rows(x, 1e-6);
    let n = tape.mul_row(n, scale);
    tape.add_row(n, shift)
}

/// Multi-head self-attention over a `(T, D)` sequence; `mask` (if any) is a
/// `(T, T)` additive logit mask.
#[allow(clippy::too_many_arguments)]
fn attention(
    tape: &mut Tape,
    x: Var,
    qkv_w: Var,
    qkv_b: Var,
    proj_w: Var,
    proj_b: Var,
    heads: usize,
    d: usize,
    mask: Option<Var>,
) -> Var {
    let dh = d / heads;
    let wt = tape.transpose(qkv_w);
    let qkv = tape.matmul(x, wt);
    let qkv = tape.add_row(qkv, qkv_b);
    let mut parts = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = tape.slice_cols(qkv, h * dh, (h + 1) * dh);
        let k = tape.slice_cols(qkv, d + h * dh, d + (h + 1) * dh);
        let v = tape.slice_cols(qkv, 2 * d + h * dh, 2 * d + (h + 1) * dh);
        let kt = tape.transpose(k);
        let logits = tape.matmul(q, kt);
        let mut logits = tape.scale(logits, 1.0 / (dh as f64).sqrt());
        if let Some(m) = mask {
            logits = tape.add(logits, m);
        }
        let attn = tape.softmax_rows(logits);
        parts.push(tape.matmul(attn, v));
    }
    let merged = tape.concat_cols(&parts);
    let pt = tape.transpose(proj_w);
    let out = tape.matmul(merged, pt);
    tape.add_row(out, proj_b)
}

fn transformer_block(
    tape: &mut Tape,
    x: Var,
    params: &TargetParams,
    prefix: &str,
    heads: usize,
    d: usize,
    mask: Option<Var>,
) -> Result<Var> {
    let ln1_s = params.get(&format!("{prefix}.ln1.weight"))?;
    let ln1_b = params.get(&format!("{prefix}.ln1.bias"))?;
    let h = layer_norm_affine(tape, x, ln1_s, ln1_b);
    let att = attention(
        tape,
        h,
        params.get(&format!("{prefix}.attn.qkv.weight"))?,
        params.get(&format!("{prefix}.attn.qkv.bias"))?,
        params.get(&format!("{prefix}.attn.proj.weight"))?,
        params.get(&format!("{prefix}.attn.proj.bias"))?,
        heads,
        d,
        mask,
    );
    let x = tape.add(x, att);

    let ln2_s = params.get(&format!("{prefix}.ln2.weight"))?;
    let ln2_b = params.get(&format!("{prefix}.ln2.bias"))?;
    let h = layer_norm_affine(tape, x, ln2_s, ln2_b);
    let fc1 = params.get(&format!("{prefix}.mlp.fc1.weight"))?;
    let fc1_b = params.get(&format!("{prefix}.mlp.fc1.bias"))?;
    let fc2 = params.get(&format!("{prefix}.mlp.fc2.weight"))?;
    let fc2_b = params.get(&format!("{prefix}.mlp.fc2.bias"))?;
    let w = tape.transpose(fc1);
    let h = tape.matmul(h, w);
    let h = tape.add_row(h, fc1_b);
    let h = tape.relu(h);
    let w = tape.transpose(fc2);
    let h = tape.matmul(h, w);
    let h = tape.add_row(h, fc2_b);
    Ok(tape.add(x, h))
}

/// Class logits for a batch of patch matrices; returns an `(n, classes)` var.
pub fn vit_logits(
    tape: &mut Tape,
    spec: &ViTSpec,
    params: &TargetParams,
    patch_batch: &[Array2<f64>],
) -> Result<Var> {
    let d = spec.hidden_dim;
    let p = spec.patch_size;
    let unfold = Arc::new(patch_unfold_idx(d, p));

    let patch_w = params.get("patch_embed.weight")?;
    let patch_mat = tape.gather(patch_w, unfold, (3 * p * p, d));
    let patch_b = params.get("patch_embed.bias")?;
    let cls = params.get("cls_token")?;
    let pos = params.get("pos_embed")?;

    let mut logit_rows = Vec::with_capacity(patch_batch.len());
    for patches in patch_batch {
        let pv = tape.leaf(patches.clone());
        let tok = tape.matmul(pv, patch_mat);
        let tok = tape.add_row(tok, patch_b);
        let mut x = tape.concat_rows(&[cls, tok]);
        x = tape.add(x, pos);
        for i in 0..spec.num_layers {
            x = transformer_block(tape, x, params, &format!("blocks.{i}"), spec.num_heads, d, None)?;
        }
        let lnf_s = params.get("ln_f.weight")?;
        let lnf_b = params.get("ln_f.bias")?;
        let x = layer_norm_affine(tape, x, lnf_s, lnf_b);
        let cls_row = tape.slice_rows(x, 0, 1);
        let head_w = params.get("head.weight")?;
        let head_b = params.get("head.bias")?;
        let wt = tape.transpose(head_w);
        let logits = tape.matmul(cls_row, wt);
        logit_rows.push(tape.add_row(logits, head_b));
    }
    Ok(tape.concat_rows(&logit_rows))
}

/// Next-token logits for one context window; returns a `(T, vocab)` var.
pub fn gpt_logits(
    tape: &mut Tape,
    spec: &GptSpec,
    params: &TargetParams,
    context: &[usize],
) -> Result<Var> {
    let d = spec.embed_dim;
    let t_len = context.len();
    if t_len > spec.context_length {
        return Err(LogahError::Config(format!(
            "context {} exceeds length {}",
            t_len, spec.context_length
        )));
    }
    let wte = params.get("wte.weight")?;
    let wpe = params.get("wpe.weight")?;
    let tok_idx: Vec<usize> = context
        .iter()
        .flat_map(|&t| (0..d).map(move |c| t * d + c))
        .collect();
    let tok = tape.gather(wte, Arc::new(tok_idx), (t_len, d));
    let pos = tape.slice_rows(wpe, 0, t_len);
    let mut x = tape.add(tok, pos);

    let mut mask = Array2::zeros((t_len, t_len));
    for i in 0..t_len {
        for j in i + 1..t_len {
            mask[[i, j]] = -1e9;
        }
    }
    let mask = tape.leaf(mask);

    for i in 0..spec.num_layers {
        x = transformer_block(tape, x, params, &format!("blocks.{i}"), spec.num_heads, d, Some(mask))?;
    }
    let lnf_s = params.get("ln_f.weight")?;
    let lnf_b = params.get("ln_f.bias")?;
    let x = layer_norm_affine(tape, x, lnf_s, lnf_b);
    let head = if spec.tie_word_embeddings {
        wte
    } else {
        params.get("lm_head.weight")?
    };
    let ht = tape.transpose(head);
    Ok(tape.matmul(x, ht))
}

pub(crate) fn fold_patch_weight(data: &[f32], d: usize, p: usize) -> Array2<f64> {
    let mut out = Array2::zeros((d * p, 3 * p));
    for co in 0..d {
        for ci in 0..3 {
            for h in 0..p {
                for w in 0..p {
                    out[[co * p + h, ci * p + w]] =
                        data[((co * 3 + ci) * p + h) * p + w] as f64;
                }
            }
        }
    }
    out
}

/// Convert a realized parameter set into forward-pass-layout matrices.
pub fn parameter_arrays(
    spec: &ArchSpec,
    params: &PredictedParameterSet,
) -> Result<BTreeMap<String, Array2<f64>>> {
    let mut out = BTreeMap::new();
    for (name, t) in &params.tensors {
        let arr = match (name.as_str(), t.shape.len()) {
            ("patch_embed.weight", 4) => {
                let (d, p) = match spec {
                    ArchSpec::Vit(v) => (v.hidden_dim, v.patch_size),
                    ArchSpec::Gpt(_) => {
                        return Err(LogahError::ShapeContract(
                            "patch weight in a gpt parameter set".into(),
                        ))
                    }
                };
                fold_patch_weight(&t.data, d, p)
            }
            (_, 1) => Array2::from_shape_vec(
                (1, t.shape[0]),
                t.data.iter().map(|&v| v as f64).collect(),
            )
            .expect("vector"),
            (_, 2) | (_, 4) => {
                let (rows, cols) = (t.shape[0], t.shape[1]);
                if t.shape.len() == 4 && (t.shape[2] != 1 || t.shape[3] != 1) {
                    return Err(LogahError::ShapeContract(format!(
                        "{name}: unexpected spatial dims {:?}",
                        t.shape
                    )));
                }
                Array2::from_shape_vec(
                    (rows, cols),
                    t.data.iter().map(|&v| v as f64).collect(),
                )
                .map_err(|e| LogahError::ShapeContract(format!("{name}: {e}")))?
            }
            _ => {
                return Err(LogahError::ShapeContract(format!(
                    "{name}: unsupported tensor rank {}",
                    t.shape.len()
                )))
            }
        };
        out.insert(name.clone(), arr);
    }
    Ok(out)
}

/// Load a realized parameter set onto the tape in forward-pass layout.
pub fn load_parameter_set(
    tape: &mut Tape,
    spec: &ArchSpec,
    params: &PredictedParameterSet,
) -> Result<TargetParams> {
    let arrays = parameter_arrays(spec, params)?;
    let vars = arrays
        .into_iter()
        .map(|(name, arr)| (name, tape.leaf(arr)))
        .collect();
    Ok(TargetParams { vars })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{NamedTensor, TensorSource};

    #[test]
    fn patch_unfold_is_a_permutation() {
        let (d, p) = (4, 2);
        let idx = patch_unfold_idx(d, p);
        assert_eq!(idx.len(), 3 * p * p * d);
        let mut seen = vec![false; d * p * 3 * p];
        for &i in &idx {
            assert!(!seen[i], "duplicate index {i}");
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn unfold_matches_fold() {
        // realize a labeled 4-D patch tensor, fold it for storage, unfold on
        // tape, and check the matrix multiplies patches like the direct loop
        let (d, p) = (2usize, 2usize);
        let data: Vec<f32> = (0..d * 3 * p * p).map(|i| i as f32).collect();
        let folded = fold_patch_weight(&data, d, p);
        let mut tape = Tape::new();
        let fv = tape.leaf(folded);
        let mat = tape.gather(fv, Arc::new(patch_unfold_idx(d, p)), (3 * p * p, d));
        let m = tape.value(mat);
        // m[(ch*p+dy)*p+dx, co] should equal the 4-D entry [co, ch, dy, dx]
        for co in 0..d {
            for ch in 0..3 {
                for dy in 0..p {
                    for dx in 0..p {
                        let flat4 = ((co * 3 + ch) * p + dy) * p + dx;
                        assert_eq!(m[[(ch * p * p) + dy * p + dx, co]], data[flat4] as f64);
                    }
                }
            }
        }
    }

    #[test]
    fn missing_tensor_is_named() {
        let tp = TargetParams::default();
        match tp.get("head.weight") {
            Err(LogahError::MissingTensor(n)) => assert_eq!(n, "head.weight"),
            other => panic!("expected missing-tensor error, got {other:?}"),
        }
    }

    #[test]
    fn uniform_logits_give_log_vocab_ce() {
        // a gpt whose lm head outputs constants: per-token CE is ln(vocab)
        let vocab = 7usize;
        let mut tape = Tape::new();
        let logits = tape.leaf(Array2::zeros((5, vocab)));
        let labels = Arc::new(vec![1usize, 2, 3, 4, 5]);
        let ce = tape.cross_entropy_logits(logits, labels);
        let ppl = tape.value(ce)[[0, 0]].exp();
        assert!((ppl - vocab as f64).abs() < 1e-9);
    }

    #[test]
    fn parameter_set_loading_rejects_bad_rank() {
        let mut params = PredictedParameterSet::default();
        params.tensors.insert(
            "x".into(),
            NamedTensor { shape: vec![2, 2, 2], data: vec![0.0; 8], source: TensorSource::Predicted },
        );
        let mut tape = Tape::new();
        let spec = ArchSpec::Gpt(crate::archspace::GptSpec::gpt2_s());
        assert!(load_parameter_set(&mut tape, &spec, &params).is_err());
    }
}
