//! Framed JSON protocol between the engine and model servers.
//!
//! Each message is a 4-byte big-endian length followed by that many bytes
//! of UTF-8 JSON. Requests and responses are matched by `id`; unknown
//! fields are ignored on decode.
//!
//! ```text
//! request : {"id","op":"classify"|"segment","task":"quality"|"pvi"|"edd"|null,"model",
//!            "image":{"w","h","c","encoding":"png-b64"|"f32le-b64","data"}}
//! response: {"id","model"?,"scores":{label:number},"details"?}
//!         | {"id","model"?,"mask":{"w","h","encoding":"f32le-b64","data"}}
//!         | {"id","error":{"code","message"}}
//! ```

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ProbabilityMask, Task};
use crate::grid::PixelGrid;
use crate::imaging::{decode, encode_png, ImageFormat};

/// Frames larger than this are rejected without reading the body.
pub const MAX_FRAME_BYTES: usize = 64 * 1024 * 1024;

pub mod codes {
    pub const BAD_FRAME: &str = "bad-frame";
    pub const BAD_REQUEST: &str = "bad-request";
    pub const UNSUPPORTED_OP: &str = "unsupported-op";
    pub const UNSUPPORTED_TASK: &str = "unsupported-task";
    pub const UNKNOWN_MODEL: &str = "unknown-model";
    pub const BAD_IMAGE: &str = "bad-image";
    pub const INTERNAL: &str = "internal";
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("connection closed")]
    Closed,
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_BYTES} byte limit")]
    TooLarge(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum PayloadError {
    #[error("invalid base64: {0}")]
    Base64(String),
    #[error("unsupported encoding `{0}`")]
    Encoding(String),
    #[error("payload geometry: {0}")]
    Geometry(String),
    #[error("payload values: {0}")]
    Values(String),
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    let mut buf = Vec::with_capacity(4 + payload.len());
    buf.extend_from_slice(&len.to_be_bytes());
    buf.extend_from_slice(payload);
    w.write_all(&buf)?;
    w.flush()
}

pub fn encode_frame(payload: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(4 + payload.len());
    buf.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    buf.extend_from_slice(payload);
    buf
}

/// Reads the 4-byte length prefix. `Closed` on clean EOF before any byte.
pub fn read_frame_len<R: Read>(r: &mut R) -> Result<usize, FrameError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Err(FrameError::Closed),
            Ok(0) => return Err(FrameError::Truncated { needed: 4, available: got }),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(u32::from_be_bytes(len) as usize)
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Vec<u8>, FrameError> {
    let len = read_frame_len(r)?;
    if len > MAX_FRAME_BYTES {
        return Err(FrameError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated {
            needed: len,
            available: 0,
        },
        _ => e.into(),
    })?;
    Ok(body)
}

/// Splits one frame off the front of `bytes`, returning `(payload, rest)`.
pub fn decode_frame(bytes: &[u8]) -> Result<(&[u8], &[u8]), FrameError> {
    if bytes.len() < 4 {
        return Err(FrameError::Truncated {
            needed: 4,
            available: bytes.len(),
        });
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(FrameError::TooLarge(len));
    }
    let rest = &bytes[4..];
    if rest.len() < len {
        return Err(FrameError::Truncated {
            needed: len,
            available: rest.len(),
        });
    }
    Ok(rest.split_at(len))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageEncoding {
    #[serde(rename = "png-b64")]
    PngB64,
    #[serde(rename = "f32le-b64")]
    F32leB64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub w: usize,
    pub h: usize,
    pub c: usize,
    pub encoding: String,
    pub data: String,
}

fn f32le_b64(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn from_f32le_b64(data: &str, expected: usize) -> Result<Vec<f32>, PayloadError> {
    let bytes = B64.decode(data).map_err(|e| PayloadError::Base64(e.to_string()))?;
    if bytes.len() != expected * 4 {
        return Err(PayloadError::Geometry(format!(
            "expected {} bytes of f32 data, got {}",
            expected * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

impl ImagePayload {
    pub fn from_grid(grid: &PixelGrid, encoding: ImageEncoding) -> Result<Self, PayloadError> {
        let data = match encoding {
            ImageEncoding::F32leB64 => f32le_b64(grid.values()),
            ImageEncoding::PngB64 => B64.encode(encode_png(grid).map_err(|e| PayloadError::Values(e.to_string()))?),
        };
        Ok(Self {
            w: grid.width(),
            h: grid.height(),
            c: grid.channels(),
            encoding: match encoding {
                ImageEncoding::PngB64 => "png-b64",
                ImageEncoding::F32leB64 => "f32le-b64",
            }
            .to_string(),
            data,
        })
    }

    pub fn to_grid(&self) -> Result<PixelGrid, PayloadError> {
        let count = self
            .w
            .checked_mul(self.h)
            .and_then(|n| n.checked_mul(self.c))
            .filter(|n| *n > 0 && *n <= MAX_FRAME_BYTES)
            .ok_or_else(|| PayloadError::Geometry(format!("{}x{}x{}", self.w, self.h, self.c)))?;
        match self.encoding.as_str() {
            "f32le-b64" => {
                let values = from_f32le_b64(&self.data, count)?;
                PixelGrid::new(self.w, self.h, self.c, values).map_err(|e| PayloadError::Values(e.to_string()))
            }
            "png-b64" => {
                let bytes = B64.decode(&self.data).map_err(|e| PayloadError::Base64(e.to_string()))?;
                let grid = decode(&bytes, ImageFormat::Png).map_err(|e| PayloadError::Values(e.to_string()))?;
                if grid.width() != self.w || grid.height() != self.h || grid.channels() != self.c {
                    return Err(PayloadError::Geometry(format!(
                        "declared {}x{}x{}, PNG is {}x{}x{}",
                        self.w,
                        self.h,
                        self.c,
                        grid.width(),
                        grid.height(),
                        grid.channels()
                    )));
                }
                Ok(grid)
            }
            other => Err(PayloadError::Encoding(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPayload {
    pub w: usize,
    pub h: usize,
    pub encoding: String,
    pub data: String,
}

impl MaskPayload {
    pub fn from_mask(mask: &ProbabilityMask) -> Self {
        Self {
            w: mask.width(),
            h: mask.height(),
            encoding: "f32le-b64".into(),
            data: f32le_b64(mask.probs()),
        }
    }

    pub fn to_mask(&self) -> Result<ProbabilityMask, PayloadError> {
        if self.encoding != "f32le-b64" {
            return Err(PayloadError::Encoding(self.encoding.clone()));
        }
        let count = self
            .w
            .checked_mul(self.h)
            .filter(|n| *n > 0 && *n <= MAX_FRAME_BYTES)
            .ok_or_else(|| PayloadError::Geometry(format!("{}x{}", self.w, self.h)))?;
        let probs = from_f32le_b64(&self.data, count)?;
        ProbabilityMask::new(self.w, self.h, probs).map_err(PayloadError::Values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Classify,
    Segment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: String,
    pub op: Op,
    pub task: Option<Task>,
    pub model: String,
    pub image: ImagePayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: String,
    pub message: String,
}

/// Any response envelope. Exactly one of `scores`, `mask` or `error` is set
/// on well-formed replies.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Response {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorPayload>,
}

impl Response {
    pub fn error(id: impl Into<String>, code: &str, message: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            error: Some(ErrorPayload {
                code: code.to_string(),
                message: message.into(),
            }),
            ..Self::default()
        }
    }

    /// Canonical compact JSON; key order is fixed by field order.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("response serializes")
    }
}

impl Request {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("request serializes")
    }
}
