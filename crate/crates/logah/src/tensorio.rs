//! Named-tensor archive: a directory of raw little-endian f32 arrays plus a
//! JSON manifest listing (name, shape, predicted|fallback). Round trips are
//! bit-exact.

use crate::decoder::{NamedTensor, PredictedParameterSet, TensorSource};
use crate::{LogahError, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    source: TensorSource,
    file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    tensors: Vec<ManifestEntry>,
    fallback: Vec<String>,
    non_predicted: Vec<String>,
}

fn tensor_file_name(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.bin")
}

/// Write the parameter set under `dir` (created if missing).
pub fn write_archive(params: &PredictedParameterSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(params.tensors.len());
    for (name, t) in &params.tensors {
        let file = tensor_file_name(name);
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join(&file))?);
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape.clone(),
            source: t.source,
            file,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        tensors: entries,
        fallback: params.fallback.clone(),
        non_predicted: params.non_predicted.clone(),
    };
    let f = fs::File::create(dir.join(MANIFEST_NAME))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &manifest)?;
    Ok(())
}

/// Read an archive back; shapes and byte payloads must be consistent.
pub fn read_archive(dir: &Path) -> Result<PredictedParameterSet> {
    let manifest: Manifest = serde_json::from_reader(std::io::BufReader::new(
        fs::File::open(dir.join(MANIFEST_NAME))?,
    ))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(LogahError::Parse(format!(
            "unsupported archive version {}",
            manifest.format_version
        )));
    }
    let mut out = PredictedParameterSet {
        fallback: manifest.fallback,
        non_predicted: manifest.non_predicted,
        ..Default::default()
    };
    for e in manifest.tensors {
        let numel: usize = e.shape.iter().product();
        let mut bytes = Vec::with_capacity(numel * 4);
        fs::File::open(dir.join(&e.file))?.read_to_end(&mut bytes)?;
        if bytes.len() != numel * 4 {
            return Err(LogahError::Parse(format!(
                "tensor {}: expected {} bytes, found {}",
                e.name,
                numel * 4,
                bytes.len()
            )));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.tensors.insert(
            e.name,
            NamedTensor { shape: e.shape, data, source: e.source },
        );
    }
    Ok(out)
}
