// SPDX-License-Identifier: Apache-2.0

//! Embedding codecs for uplink.
//!
//! * fp32: little-endian IEEE single precision.
//! * fp16: little-endian half precision, round-to-nearest-even.
//! * int8: one little-endian f32 scale `max|x| / 127` followed by
//!   `round(x / scale)` per component, clamped to `[-127, 127]`.

use std::fmt;
use std::str::FromStr;

use half::f16;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Embedding, EmbeddingError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizationScheme {
    #[default]
    Fp32,
    Fp16,
    Int8,
}

impl QuantizationScheme {
    pub const ALL: [QuantizationScheme; 3] = [QuantizationScheme::Fp32, QuantizationScheme::Fp16, QuantizationScheme::Int8];

    pub fn bytes_per_component(self) -> usize {
        match self {
            QuantizationScheme::Fp32 => 4,
            QuantizationScheme::Fp16 => 2,
            QuantizationScheme::Int8 => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuantizationScheme::Fp32 => "fp32",
            QuantizationScheme::Fp16 => "fp16",
            QuantizationScheme::Int8 => "int8",
        }
    }
}

impl fmt::Display for QuantizationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuantizationScheme {
    type Err = QuantError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QuantizationScheme::ALL
            .into_iter()
            .find(|q| q.as_str() == s)
            .ok_or_else(|| QuantError::UnknownScheme(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("{scheme} buffer for dim {dim} must be {expected} bytes, got {actual}")]
    LengthMismatch { scheme: QuantizationScheme, dim: usize, expected: usize, actual: usize },
    #[error("unknown quantization scheme `{0}` (expected fp32, fp16 or int8)")]
    UnknownScheme(String),
    #[error("decoded vector is invalid: {0}")]
    Decode(#[from] EmbeddingError),
}

const INT8_MAX: f32 = 127.0;

/// Encoded byte length for one vector, including the int8 scale.
pub fn encoded_len(scheme: QuantizationScheme, dim: usize) -> usize {
    dim * scheme.bytes_per_component() + if scheme == QuantizationScheme::Int8 { 4 } else { 0 }
}

pub fn quantize_embedding(e: &Embedding, scheme: QuantizationScheme) -> Vec<u8> {
    let values = e.as_slice();
    let mut out = Vec::with_capacity(encoded_len(scheme, values.len()));
    match scheme {
        QuantizationScheme::Fp32 => {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        QuantizationScheme::Fp16 => {
            for &v in values {
                out.extend_from_slice(&f16::from_f32(v).to_le_bytes());
            }
        }
        QuantizationScheme::Int8 => {
            let max_abs = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            let scale = max_abs / INT8_MAX;
            out.extend_from_slice(&scale.to_le_bytes());
            for &v in values {
                let q = if scale > 0.0 { (v / scale).round().clamp(-INT8_MAX, INT8_MAX) } else { 0.0 };
                out.push(q as i8 as u8);
            }
        }
    }
    out
}

/// Decodes and re-normalizes. fp32 buffers are taken bit-for-bit, since an
/// encoded embedding is already unit norm.
pub fn dequantize_embedding(bytes: &[u8], scheme: QuantizationScheme, dim: usize) -> Result<Embedding, QuantError> {
    let expected = encoded_len(scheme, dim);
    if bytes.len() != expected || dim == 0 {
        return Err(QuantError::LengthMismatch { scheme, dim, expected, actual: bytes.len() });
    }
    match scheme {
        QuantizationScheme::Fp32 => {
            let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            Ok(Embedding::from_unit_f32(values)?)
        }
        QuantizationScheme::Fp16 => {
            let values: Vec<f64> =
                bytes.chunks_exact(2).map(|c| f64::from(f16::from_le_bytes([c[0], c[1]]).to_f32())).collect();
            Ok(Embedding::normalize(&values, dim)?)
        }
        QuantizationScheme::Int8 => {
            let scale = f64::from(f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]));
            let values: Vec<f64> = bytes[4..].iter().map(|&b| f64::from(b as i8) * scale).collect();
            Ok(Embedding::normalize(&values, dim)?)
        }
    }
}

/// Passes an embedding through encode and decode.
pub fn round_trip(e: &Embedding, scheme: QuantizationScheme) -> Result<Embedding, QuantError> {
    dequantize_embedding(&quantize_embedding(e, scheme), scheme, e.dim())
}
