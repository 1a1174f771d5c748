//! Pre-compression context features: length, perplexity and DEFLATE compressibility.

use std::io::Write;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::InstanceRecord;

/// Codec settings; echoed into every report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressorConfig {
    pub codec: Codec,
    pub level: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    /// Raw RFC 1951 stream, no zlib/gzip container.
    Deflate,
}

impl Default for CompressorConfig {
    fn default() -> Self {
        CompressorConfig {
            codec: Codec::Deflate,
            level: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityFeatures {
    pub n_ctx: u64,
    pub ppl: f64,
    pub compress_ratio: f64,
    /// Set when `n_ctx` came from whitespace splitting rather than the model tokenizer.
    pub n_ctx_fallback: bool,
}

impl ComplexityFeatures {
    pub const NAMES: [&'static str; 3] = ["n_ctx", "ppl", "compress_ratio"];

    pub fn to_array(&self) -> [f64; 3] {
        [self.n_ctx as f64, self.ppl, self.compress_ratio]
    }
}

pub fn compressed_len(bytes: &[u8], cfg: CompressorConfig) -> usize {
    match cfg.codec {
        Codec::Deflate => {
            let mut enc = DeflateEncoder::new(Vec::new(), Compression::new(cfg.level));
            enc.write_all(bytes).expect("writing to a Vec cannot fail");
            enc.finish().expect("writing to a Vec cannot fail").len()
        }
    }
}

/// Raw length over compressed length, with the default codec.
pub fn compressibility(bytes: &[u8]) -> Result<f64> {
    compressibility_with(bytes, CompressorConfig::default())
}

pub fn compressibility_with(bytes: &[u8], cfg: CompressorConfig) -> Result<f64> {
    if bytes.is_empty() {
        return Err(Error::domain("compressibility of empty input"));
    }
    Ok(bytes.len() as f64 / compressed_len(bytes, cfg) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityOptions {
    pub compressor: CompressorConfig,
    /// Count whitespace-separated words when the manifest has no token count.
    pub whitespace_token_fallback: bool,
}

pub fn context_complexity(record: &InstanceRecord) -> Result<ComplexityFeatures> {
    context_complexity_with(record, &ComplexityOptions::default())
}

pub fn context_complexity_with(
    record: &InstanceRecord,
    opts: &ComplexityOptions,
) -> Result<ComplexityFeatures> {
    let missing = |field: &str| Error::MissingFeature {
        id: record.id.clone(),
        field: field.to_string(),
    };
    let (n_ctx, n_ctx_fallback) = match record.token_count {
        Some(n) => (n, false),
        None if opts.whitespace_token_fallback => {
            let n = record.context.split_whitespace().count() as u64;
            if n == 0 {
                return Err(missing("token_count"));
            }
            (n, true)
        }
        None => return Err(missing("token_count")),
    };
    let ppl = record.perplexity.ok_or_else(|| missing("perplexity"))?;
    let compress_ratio = compressibility_with(record.context.as_bytes(), opts.compressor)
        .map_err(|e| Error::domain(format!("instance {:?}: {e}", record.id)))?;
    Ok(ComplexityFeatures {
        n_ctx,
        ppl,
        compress_ratio,
        n_ctx_fallback,
    })
}
