//! Decoder parameter-count formulas and the O(d^3) vs O(d^2) comparison:
//! closed-form counts for the tiled baseline and the low-rank decoder, their
//! difference, the first-vs-last-term bound, and scaling-curve emission.
//! Everything is exact integer arithmetic.

use crate::decoder::{decoder_shape_plan, DecoderConfig};
use crate::encoder::{EncoderConfig, EncoderWeights};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Baseline decoder count: `4d^2*256 + 32d^2 + 8d^3 + d*num_classes`.
pub fn ghn3_decoder_params(d: u64, num_classes: u64) -> u64 {
    4 * d * d * 256 + 32 * d * d + 8 * d * d * d + d * num_classes
}

/// Low-rank decoder count: `4d^2 + 32d^2 + 8d*2r^2 + r*K`.
pub fn logah_decoder_params(d: u64, r: u64, k: u64) -> u64 {
    4 * d * d + 32 * d * d + 8 * d * 2 * r * r + r * k
}

/// Count difference with `K = c_out * h` substituted:
/// `4d^2*(16^2-1) + 8d*(d^2-2r^2) + d*num_classes - r*c_out*h`.
pub fn param_delta(d: i128, r: i128, num_classes: i128, c_out: i128, h: i128) -> i128 {
    4 * d * d * (256 - 1) + 8 * d * (d * d - 2 * r * r) + d * num_classes - r * c_out * h
}

/// First-minus-last-term bound at r ~ d/2, K = 2048*16: `16d*(64d - 1024)`.
pub fn delta1(d: i128) -> i128 {
    16 * d * (64 * d - 1024)
}

/// Term-by-term breakdown of a decoder count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountReport {
    pub method: String,
    pub d: u64,
    pub r: Option<u64>,
    pub k: Option<u64>,
    pub num_classes: Option<u64>,
    pub decoder_params: u64,
    pub notes: Vec<(String, u64)>,
}

pub fn ghn3_count_report(d: u64, num_classes: u64) -> CountReport {
    CountReport {
        method: "ghn3".into(),
        d,
        r: None,
        k: None,
        num_classes: Some(num_classes),
        decoder_params: ghn3_decoder_params(d, num_classes),
        notes: vec![
            ("block 4*d^2*16*16".into(), 4 * d * d * 256),
            ("mlp 4d*8d".into(), 32 * d * d),
            ("mlp 8d*d^2".into(), 8 * d * d * d),
            ("head d*num_classes".into(), d * num_classes),
        ],
    }
}

pub fn logah_count_report(d: u64, r: u64, k: u64) -> CountReport {
    CountReport {
        method: "logah".into(),
        d,
        r: Some(r),
        k: Some(k),
        num_classes: None,
        decoder_params: logah_decoder_params(d, r, k),
        notes: vec![
            ("M1 d*4d".into(), 4 * d * d),
            ("M2 4d*8d".into(), 32 * d * d),
            ("M3 8d*2r^2".into(), 8 * d * 2 * r * r),
            ("M4 r*K".into(), r * k),
        ],
    }
}

/// Hypernetwork variant presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tiny,
    Small,
    Base,
    Large,
}

impl std::str::FromStr for Variant {
    type Err = crate::LogahError;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "tiny" => Ok(Variant::Tiny),
            "small" => Ok(Variant::Small),
            "base" => Ok(Variant::Base),
            "large" => Ok(Variant::Large),
            other => Err(crate::LogahError::Config(format!("unknown variant: {other}"))),
        }
    }
}

/// Default max mask for all low-rank variants: 2048 * 16.
pub const DEFAULT_MAX_MASK: usize = 2048 * 16;

/// (r, L, d, H) per low-rank variant.
pub fn logah_variant(v: Variant) -> (usize, usize, usize, usize) {
    match v {
        Variant::Tiny => (32, 3, 64, 8),
        Variant::Small => (90, 5, 128, 16),
        Variant::Base => (128, 5, 256, 16),
        Variant::Large => (256, 12, 256, 16),
    }
}

/// (L, d, H) per baseline variant (Large maps onto the 12-layer row).
pub fn ghn3_variant(v: Variant) -> (usize, usize, usize) {
    match v {
        Variant::Tiny => (3, 64, 8),
        Variant::Small => (5, 128, 16),
        Variant::Base | Variant::Large => (12, 256, 16),
    }
}

/// Encoder + decoder configs for a low-rank variant.
pub fn variant_configs(v: Variant, num_classes: usize) -> (EncoderConfig, DecoderConfig) {
    let (r, layers, d, heads) = logah_variant(v);
    (
        EncoderConfig { d, layers, heads, max_distance: 8 },
        DecoderConfig { d, r, k: DEFAULT_MAX_MASK, num_classes, fallback_seed: 0 },
    )
}

/// Full-model count for a low-rank variant: encoder reconstruction + exact
/// decoder formula.
pub fn logah_total_params(v: Variant) -> u64 {
    let (r, layers, d, heads) = logah_variant(v);
    let enc = EncoderConfig { d, layers, heads, max_distance: 8 };
    EncoderWeights::param_count_for(&enc) + logah_decoder_params(d as u64, r as u64, DEFAULT_MAX_MASK as u64)
}

/// Full-model count for a baseline variant (decoder term exact, encoder term
/// the same reconstruction).
pub fn ghn3_total_params(v: Variant, num_classes: u64) -> u64 {
    let (layers, d, heads) = ghn3_variant(v);
    let enc = EncoderConfig { d, layers, heads, max_distance: 8 };
    EncoderWeights::param_count_for(&enc) + ghn3_decoder_params(d as u64, num_classes)
}

/// Sanity tie between the formula and the constructed matrices.
pub fn decoder_formula_matches_plan(cfg: &DecoderConfig) -> bool {
    let plan = decoder_shape_plan(cfg);
    let total: u64 = plan.iter().map(|&(r, c)| (r * c) as u64).sum();
    total == logah_decoder_params(cfg.d as u64, cfg.r as u64, cfg.k as u64)
}

/// One row of the width-scaling table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRow {
    pub width: u64,
    /// baseline must set d = width to support that width without copying
    pub ghn3_params: u64,
    /// constant whenever width*16 <= K
    pub logah_params: Option<u64>,
}

/// Baseline-vs-low-rank counts across target widths. The baseline column is
/// a labeled extrapolation of "supportable width = d".
pub fn scaling_table(widths: &[u64], logah_cfg: (u64, u64, u64), num_classes: u64) -> Vec<ScalingRow> {
    let (d, r, k) = logah_cfg;
    let logah = logah_decoder_params(d, r, k);
    widths
        .iter()
        .map(|&w| ScalingRow {
            width: w,
            ghn3_params: ghn3_decoder_params(w, num_classes),
            logah_params: if w * 16 <= k { Some(logah) } else { None },
        })
        .collect()
}

pub fn write_scaling_csv<W: Write>(rows: &[ScalingRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "width,ghn3_params,logah_params,logah_supported")?;
    for row in rows {
        match row.logah_params {
            Some(p) => writeln!(w, "{},{},{},true", row.width, row.ghn3_params, p)?,
            None => writeln!(w, "{},{},,false", row.width, row.ghn3_params)?,
        }
    }
    Ok(())
}

/// Least-squares slope of log(count) against log(width).
pub fn log_log_slope(points: &[(u64, u64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(w, _)| (w as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, p)| (p as f64).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}
