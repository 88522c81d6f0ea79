//! Architecture space: ViT-style and GPT-2-style specs, the depth-conditioned
//! samplers behind the ViTs-1K / GPTs-1K style training sets, exact parameter
//! counting, and capped dataset generation.

use crate::{LogahError, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Architecture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Vit,
    Gpt2,
}

impl std::str::FromStr for ArchKind {
    type Err = LogahError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vit" => Ok(ArchKind::Vit),
            "gpt2" => Ok(ArchKind::Gpt2),
            other => Err(LogahError::Config(format!("unknown kind: {other}"))),
        }
    }
}

/// ViT-style configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViTSpec {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub mlp_dim: usize,
    pub patch_size: usize,
    pub image_size: usize,
    pub num_classes: usize,
}

impl ViTSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim % self.num_heads != 0 {
            return Err(LogahError::InvalidSpec(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(LogahError::InvalidSpec(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.num_layers == 0 || self.num_classes == 0 {
            return Err(LogahError::InvalidSpec("zero layers or classes".into()));
        }
        Ok(())
    }

    /// Sequence length including the class token.
    pub fn num_tokens(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side + 1
    }

    /// Exact count of learnable scalars in the instantiated network.
    pub fn param_count(&self) -> Result<u64> {
        self.validate()?;
        let d = self.hidden_dim as u64;
        let mlp = self.mlp_dim as u64;
        let p = self.patch_size as u64;
        let tokens = self.num_tokens() as u64;
        let classes = self.num_classes as u64;
        let l = self.num_layers as u64;

        let patch_proj = d * 3 * p * p + d;
        let cls_token = d;
        let pos_embed = tokens * d;
        // per block: fused qkv, output proj, two layer norms, two mlp linears
        let per_block = (3 * d * d + 3 * d) + (d * d + d) + 4 * d + (d * mlp + mlp) + (mlp * d + d);
        let final_ln = 2 * d;
        let head = classes * d + classes;
        Ok(patch_proj + cls_token + pos_embed + l * per_block + final_ln + head)
    }

    /// ViT-S (image 224, patch 16, 1000 classes).
    pub fn vit_s() -> Self {
        ViTSpec {
            num_layers: 12,
            num_heads: 6,
            hidden_dim: 384,
            mlp_dim: 1536,
            patch_size: 16,
            image_size: 224,
            num_classes: 1000,
        }
    }

    /// ViT-B (image 224, patch 16, 1000 classes).
    pub fn vit_b() -> Self {
        ViTSpec {
            num_layers: 12,
            num_heads: 12,
            hidden_dim: 768,
            mlp_dim: 3072,
            patch_size: 16,
            image_size: 224,
            num_classes: 1000,
        }
    }

    /// ViT-L (image 224, patch 16, 1000 classes).
    pub fn vit_l() -> Self {
        ViTSpec {
            num_layers: 24,
            num_heads: 16,
            hidden_dim: 1024,
            mlp_dim: 4096,
            patch_size: 16,
            image_size: 224,
            num_classes: 1000,
        }
    }
}

/// GPT-2-style configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GptSpec {
    pub num_layers: usize,
    pub num_heads: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub context_length: usize,
    pub tie_word_embeddings: bool,
}

impl GptSpec {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim % self.num_heads != 0 {
            return Err(LogahError::InvalidSpec(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.num_layers == 0 || self.vocab_size == 0 || self.context_length == 0 {
            return Err(LogahError::InvalidSpec("zero-sized gpt field".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> Result<u64> {
        self.validate()?;
        let d = self.embed_dim as u64;
        let vocab = self.vocab_size as u64;
        let ctx = self.context_length as u64;
        let l = self.num_layers as u64;

        let wte = vocab * d;
        let wpe = ctx * d;
        let per_block = (3 * d * d + 3 * d) + (d * d + d) + 4 * d + (d * 4 * d + 4 * d) + (4 * d * d + d);
        let final_ln = 2 * d;
        let lm_head = if self.tie_word_embeddings { 0 } else { vocab * d };
        Ok(wte + wpe + l * per_block + final_ln + lm_head)
    }

    pub fn gpt2_s() -> Self {
        GptSpec {
            num_layers: 12,
            num_heads: 12,
            embed_dim: 768,
            vocab_size: 50257,
            context_length: 1024,
            tie_word_embeddings: true,
        }
    }

    pub fn gpt2_m() -> Self {
        GptSpec {
            num_layers: 24,
            num_heads: 16,
            embed_dim: 1024,
            vocab_size: 50257,
            context_length: 1024,
            tie_word_embeddings: true,
        }
    }

    pub fn gpt2_l() -> Self {
        GptSpec {
            num_layers: 36,
            num_heads: 20,
            embed_dim: 1280,
            vocab_size: 50257,
            context_length: 1024,
            tie_word_embeddings: true,
        }
    }
}

/// Either family, as stored in dataset records and graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchSpec {
    Vit(ViTSpec),
    Gpt(GptSpec),
}

impl ArchSpec {
    pub fn kind(&self) -> ArchKind {
        match self {
            ArchSpec::Vit(_) => ArchKind::Vit,
            ArchSpec::Gpt(_) => ArchKind::Gpt2,
        }
    }

    pub fn param_count(&self) -> Result<u64> {
        match self {
            ArchSpec::Vit(s) => s.param_count(),
            ArchSpec::Gpt(s) => s.param_count(),
        }
    }
}

/// Scalar count of one linear layer; the unit everything else sums up from.
pub fn linear_param_count(in_dim: u64, out_dim: u64, bias: bool) -> u64 {
    in_dim * out_dim + if bias { out_dim } else { 0 }
}

/// Draw a training ViT spec: depth-conditioned width (deeper means narrower),
/// step-32 widths, fixed patch 2 / image 32 / 100 classes.
pub fn sample_vit_spec(rng: &mut ChaCha8Rng) -> ViTSpec {
    let layers = rng.gen_range(3..10usize);
    let (dim_min, dim_max) = if layers > 5 {
        (128, 256)
    } else if layers > 3 {
        (256, 384)
    } else {
        (384, 512)
    };
    let choices: Vec<usize> = (dim_min..=dim_max).step_by(32).collect();
    let hidden_dim = *choices.choose(rng).expect("non-empty width range");
    let mlp_dim = hidden_dim * 4;
    let heads = if hidden_dim % 12 == 0 {
        *[3usize, 6, 12].choose(rng).unwrap()
    } else if hidden_dim % 6 == 0 {
        *[3usize, 6].choose(rng).unwrap()
    } else if hidden_dim % 3 == 0 {
        3
    } else {
        *[4usize, 8].choose(rng).unwrap()
    };
    ViTSpec {
        num_layers: layers,
        num_heads: heads,
        hidden_dim,
        mlp_dim,
        patch_size: 2,
        image_size: 32,
        num_classes: 100,
    }
}

/// Draw a training GPT-2 spec: step-8 widths, untied embeddings, head count
/// the largest of {8, 6, 4} dividing the width.
pub fn sample_gpt_spec(rng: &mut ChaCha8Rng) -> GptSpec {
    let layers = rng.gen_range(3..10usize);
    let (dim_min, dim_max) = if layers > 5 {
        (72, 176)
    } else if layers > 3 {
        (128, 176)
    } else {
        (176, 256)
    };
    let choices: Vec<usize> = (dim_min..=dim_max).step_by(8).collect();
    let embed_dim = *choices.choose(rng).expect("non-empty width range");
    let heads = [8usize, 6, 4]
        .into_iter()
        .find(|h| embed_dim % h == 0)
        .expect("step-8 widths always divide by 4");
    GptSpec {
        num_layers: layers,
        num_heads: heads,
        embed_dim,
        vocab_size: 50257,
        context_length: 1024,
        tie_word_embeddings: false,
    }
}

/// Desk-scale ViT sampler for fast experiments and tests: 2-3 blocks, widths
/// {16, 24, 32}, 8x8 images with patch 2. Folded dims stay within small max
/// masks (4*32 = 128).
pub fn sample_tiny_vit_spec(rng: &mut ChaCha8Rng, num_classes: usize) -> ViTSpec {
    let layers = rng.gen_range(2..4usize);
    let hidden_dim = *[16usize, 24, 32].choose(rng).unwrap();
    let heads = *[2usize, 4].choose(rng).unwrap();
    ViTSpec {
        num_layers: layers,
        num_heads: heads,
        hidden_dim,
        mlp_dim: hidden_dim * 4,
        patch_size: 2,
        image_size: 8,
        num_classes,
    }
}

/// One generated dataset entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchRecord {
    pub id: usize,
    pub kind: ArchKind,
    pub seed: u64,
    pub config: ArchSpec,
    pub param_count: u64,
}

/// A capped, reproducible set of training architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDataset {
    pub kind: ArchKind,
    pub cap: u64,
    pub records: Vec<ArchRecord>,
}

const MAX_RESAMPLES: u64 = 10_000;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derived per-record seed; stable under parallel generation order.
pub fn record_seed(global_seed: u64, index: u64, attempt: u64) -> u64 {
    splitmix64(global_seed ^ splitmix64(index ^ splitmix64(attempt)))
}

/// Generate `n` records, rejection-resampling any spec whose exact parameter
/// count exceeds `cap`.
pub fn generate_dataset(kind: ArchKind, n: usize, seed: u64, cap: u64) -> Result<ArchDataset> {
    if n == 0 {
        return Err(LogahError::Generation("n must be >= 1".into()));
    }
    if cap == 0 {
        return Err(LogahError::Generation("cap must be > 0".into()));
    }
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut accepted = None;
        for attempt in 0..MAX_RESAMPLES {
            let rs = record_seed(seed, i as u64, attempt);
            let mut rng = ChaCha8Rng::seed_from_u64(rs);
            let config = match kind {
                ArchKind::Vit => ArchSpec::Vit(sample_vit_spec(&mut rng)),
                ArchKind::Gpt2 => ArchSpec::Gpt(sample_gpt_spec(&mut rng)),
            };
            let count = config.param_count()?;
            if count <= cap {
                accepted = Some(ArchRecord {
                    id: i,
                    kind,
                    seed: rs,
                    config,
                    param_count: count,
                });
                break;
            }
        }
        match accepted {
            Some(rec) => records.push(rec),
            None => {
                return Err(LogahError::Generation(format!(
                    "cap {cap} admits no spec after {MAX_RESAMPLES} resamples (record {i})"
                )))
            }
        }
    }
    Ok(ArchDataset { kind, cap, records })
}

/// Histogram over parameter counts with fixed-width buckets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamHistogram {
    pub bucket_width: u64,
    /// (bucket_lo, bucket_hi, count)
    pub buckets: Vec<(u64, u64, usize)>,
}

impl ArchDataset {
    pub fn histogram(&self, bucket_width: u64) -> ParamHistogram {
        let max = self.records.iter().map(|r| r.param_count).max().unwrap_or(0);
        let n_buckets = (max / bucket_width + 1) as usize;
        let mut counts = vec![0usize; n_buckets];
        for r in &self.records {
            counts[(r.param_count / bucket_width) as usize] += 1;
        }
        ParamHistogram {
            bucket_width,
            buckets: counts
                .iter()
                .enumerate()
                .map(|(i, &c)| (i as u64 * bucket_width, (i as u64 + 1) * bucket_width, c))
                .collect(),
        }
    }

    /// JSON-lines: one record per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: std::io::Read>(r: R, kind: ArchKind, cap: u64) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ArchRecord = serde_json::from_str(&line)
                .map_err(|e| LogahError::Parse(format!("line {}: {e}", lineno + 1)))?;
            records.push(rec);
        }
        Ok(ArchDataset { kind, cap, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(f))
    }
}

impl ParamHistogram {
    /// CSV sidecar: bucket_lo, bucket_hi, count.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bucket_lo,bucket_hi,count")?;
        for (lo, hi, c) in &self.buckets {
            writeln!(w, "{lo},{hi},{c}")?;
        }
        Ok(())
    }
}
