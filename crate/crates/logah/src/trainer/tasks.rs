//! Task datasets the hypernetwork is trained against: an image-classification
//! reader (directory-of-arrays format), a pre-tokenized corpus reader, and
//! synthetic generators for desk-scale runs.

use crate::{LogahError, Result};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Images stored channel-major (c, h, w), flattened row-major per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// A contiguous token stream over a fixed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDataset {
    pub vocab_size: usize,
    pub tokens: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageMeta {
    n: usize,
    channels: usize,
    height: usize,
    width: usize,
    num_classes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TokenMeta {
    vocab_size: usize,
    n: usize,
}

impl ImageDataset {
    /// Class-separable synthetic data: per-class random mean image plus noise.
    pub fn synthetic(num_classes: usize, size: usize, n: usize, seed: u64) -> Self {
        let dim = 3 * size * size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.25).unwrap();
        let means: Vec<Vec<f64>> = (0..num_classes)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % num_classes;
            labels.push(y);
            images.push(means[y].iter().map(|&m| m + noise.sample(&mut rng)).collect());
        }
        ImageDataset { channels: 3, height: size, width: size, num_classes, images, labels }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Non-overlapping p x p patches of one sample, flattened (c, h, w)
    /// row-major per patch; rows ordered by patch position.
    pub fn patches(&self, index: usize, p: usize) -> Array2<f64> {
        let img = &self.images[index];
        let (c, hh, ww) = (self.channels, self.height, self.width);
        let (gh, gw) = (hh / p, ww / p);
        let mut out = Array2::zeros((gh * gw, c * p * p));
        for py in 0..gh {
            for px in 0..gw {
                let row = py * gw + px;
                for ch in 0..c {
                    for dy in 0..p {
                        for dx in 0..p {
                            let y = py * p + dy;
                            let x = px * p + dx;
                            out[[row, ch * p * p + dy * p + dx]] = img[ch * hh * ww + y * ww + x];
                        }
                    }
                }
            }
        }
        out
    }

    /// Directory-of-arrays layout: `meta.json`, `images.bin` (f32 LE),
    /// `labels.bin` (u32 LE).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = ImageMeta {
            n: self.len(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
        };
        serde_json::to_writer_pretty(std::fs::File::create(dir.join("meta.json"))?, &meta)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("images.bin"))?);
        for img in &self.images {
            for &v in img {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("labels.bin"))?);
        for &l in &self.labels {
            w.write_all(&(l as u32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ImageMeta =
            serde_json::from_reader(std::fs::File::open(dir.join("meta.json"))?)?;
        let dim = meta.channels * meta.height * meta.width;
        let mut bytes = Vec::new();
        std::fs::File::open(dir.join("images.bin"))?.read_to_end(&mut bytes)?;
        if bytes.len() != meta.n * dim * 4 {
            return Err(LogahError::Parse("images.bin size mismatch".into()));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let images = flat.chunks_exact(dim).map(|c| c.to_vec()).collect();
        let mut bytes = Vec::new();
        std::fs::File::open(dir.join("labels.bin"))?.read_to_end(&mut bytes)?;
        if bytes.len() != meta.n * 4 {
            return Err(LogahError::Parse("labels.bin size mismatch".into()));
        }
        let labels = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        Ok(ImageDataset {
            channels: meta.channels,
            height: meta.height,
            width: meta.width,
            num_classes: meta.num_classes,
            images,
            labels,
        })
    }
}

impl TokenDataset {
    /// Markov-ish synthetic stream so next-token structure is learnable.
    pub fn synthetic(vocab_size: usize, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tokens = Vec::with_capacity(n);
        let mut prev = 0u32;
        for _ in 0..n {
            let t = if rng.gen_bool(0.7) {
                (prev + 1) % vocab_size as u32
            } else {
                rng.gen_range(0..vocab_size as u32)
            };
            tokens.push(t);
            prev = t;
        }
        TokenDataset { vocab_size, tokens }
    }

    /// `meta.json` plus `tokens.bin` (u32 LE).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = TokenMeta { vocab_size: self.vocab_size, n: self.tokens.len() };
        serde_json::to_writer_pretty(std::fs::File::create(dir.join("meta.json"))?, &meta)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("tokens.bin"))?);
        for &t in &self.tokens {
            w.write_all(&t.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: TokenMeta =
            serde_json::from_reader(std::fs::File::open(dir.join("meta.json"))?)?;
        let mut bytes = Vec::new();
        std::fs::File::open(dir.join("tokens.bin"))?.read_to_end(&mut bytes)?;
        if bytes.len() != meta.n * 4 {
            return Err(LogahError::Parse("tokens.bin size mismatch".into()));
        }
        let tokens = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(TokenDataset { vocab_size: meta.vocab_size, tokens })
    }

    /// Sliced (context, next-token targets) windows starting at `start`.
    pub fn window(&self, start: usize, len: usize) -> (Vec<usize>, Vec<usize>) {
        let ctx: Vec<usize> = self.tokens[start..start + len].iter().map(|&t| t as usize).collect();
        let tgt: Vec<usize> =
            self.tokens[start + 1..start + len + 1].iter().map(|&t| t as usize).collect();
        (ctx, tgt)
    }
}

/// Either task family.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskDataset {
    Images(ImageDataset),
    Tokens(TokenDataset),
}

/// One mini-batch handed to a training step.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskBatch {
    /// (patch matrices per sample at the target patch size are built later;
    /// here we keep raw sample indices) labels per sample
    Images { indices: Vec<usize>, },
    Tokens { start: usize, len: usize },
}

impl TaskDataset {
    /// Deterministically draw a mini-batch description of size `n`.
    pub fn sample_batch(&self, n: usize, rng: &mut ChaCha8Rng) -> TaskBatch {
        match self {
            TaskDataset::Images(ds) => TaskBatch::Images {
                indices: (0..n).map(|_| rng.gen_range(0..ds.len())).collect(),
            },
            TaskDataset::Tokens(ds) => {
                let len = n.min(ds.tokens.len().saturating_sub(2)).max(1);
                let hi = ds.tokens.len() - len - 1;
                TaskBatch::Tokens { start: rng.gen_range(0..=hi), len }
            }
        }
    }
}
