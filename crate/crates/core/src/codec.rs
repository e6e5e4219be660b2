//! Binary `.xqd` format.
//!
//! A 17-byte header followed by every model parameter as a little-endian
//! `f32`:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4 | magic `XQD1` |
//! | 4  | 1 | version (1) |
//! | 5  | 1 | core count |
//! | 6  | 1 | delta count |
//! | 7  | 2 | anchor count |
//! | 9  | 2 | image width in px |
//! | 11 | 2 | image height in px |
//! | 13 | 1 | grid spacing in px |
//! | 14 | 1 | weight kind (0 Gaussian, 1 tent) |
//! | 15 | 2 | tent radius in 1/8 px, zero for Gaussian models |
//!
//! The payload is `λ, R, rotation, t_x, t_y`, then `(re, im)` for every core
//! and delta, then `(a, b, θ, σ1, σ2)` for every anchor.

use num_complex::Complex64;
use thiserror::Error;

use crate::qd::{QdParams, MAX_CORES, MAX_DELTAS};
use crate::xqd::{AnchorPoint, FieldExtent, ModelError, WeightKind, XqdModel, MAX_ANCHORS};

pub const MAGIC: [u8; 4] = *b"XQD1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 17;

const TENT_UNITS_PER_PX: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("{0} anchors exceed the format's capacity of {MAX_ANCHORS}")]
    TooManyAnchors(usize),
    #[error(
        "tent radius {0} px cannot be stored (must be a positive multiple of 1/8 px below 8192)"
    )]
    TentRadius(f64),
    #[error(transparent)]
    InvalidModel(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("not an XQD file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    BadVersion(u8),
    #[error("expected {expected} bytes, found {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("unknown weight kind {0}")]
    BadWeightKind(u8),
    #[error("reserved header bytes must be zero for Gaussian models")]
    ReservedNotZero,
    #[error("header declares {cores} cores and {deltas} deltas; at most {MAX_CORES} of each are allowed")]
    TooManySingularities { cores: u8, deltas: u8 },
    #[error(transparent)]
    InvalidModel(#[from] ModelError),
}

/// Number of real parameters, `5 + 2s + 5n`.
pub fn parameter_count(model: &XqdModel) -> usize {
    model.parameter_count()
}

/// Encoded size for `s` singular points and `n` anchors.
pub fn encoded_len(singular: usize, anchors: usize) -> usize {
    HEADER_LEN + 4 * (5 + 2 * singular + 5 * anchors)
}

fn tent_units(radius: f64) -> Result<u16, EncodeError> {
    let units = radius * TENT_UNITS_PER_PX;
    if !(units >= 1.0 && units <= f64::from(u16::MAX)) || units.fract() != 0.0 {
        return Err(EncodeError::TentRadius(radius));
    }
    Ok(units as u16)
}

pub fn encode(model: &XqdModel) -> Result<Vec<u8>, EncodeError> {
    model.validate()?;
    let n = model.anchors.len();
    if n > MAX_ANCHORS {
        return Err(EncodeError::TooManyAnchors(n));
    }
    let qd = &model.qd;
    let (kind, reserved) = match model.weight {
        WeightKind::Gaussian => (0u8, 0u16),
        WeightKind::Tent { radius } => (1u8, tent_units(radius)?),
    };
    let mut out = Vec::with_capacity(encoded_len(qd.singular_count(), n));
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(qd.cores.len() as u8);
    out.push(qd.deltas.len() as u8);
    out.extend_from_slice(&(n as u16).to_le_bytes());
    out.extend_from_slice(&model.extent.width_px.to_le_bytes());
    out.extend_from_slice(&model.extent.height_px.to_le_bytes());
    out.push(model.extent.spacing_px);
    out.push(kind);
    out.extend_from_slice(&reserved.to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);

    let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for v in [
        qd.lambda,
        qd.r,
        qd.rotation,
        qd.translation.0,
        qd.translation.1,
    ] {
        put(v);
    }
    for z in qd.cores.iter().chain(&qd.deltas) {
        put(z.re);
        put(z.im);
    }
    for p in &model.anchors {
        for v in [p.a, p.b, p.theta, p.sigma1, p.sigma2] {
            put(v);
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<XqdModel, DecodeError> {
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::LengthMismatch {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("four bytes");
    if magic != MAGIC {
        return Err(DecodeError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(DecodeError::BadVersion(bytes[4]));
    }
    let (n_cores, n_deltas) = (bytes[5], bytes[6]);
    if usize::from(n_cores) > MAX_CORES || usize::from(n_deltas) > MAX_DELTAS {
        return Err(DecodeError::TooManySingularities {
            cores: n_cores,
            deltas: n_deltas,
        });
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let n_anchors = usize::from(u16_at(7));
    let extent = FieldExtent {
        width_px: u16_at(9),
        height_px: u16_at(11),
        spacing_px: bytes[13],
    };
    let reserved = u16_at(15);
    let weight = match bytes[14] {
        0 if reserved != 0 => return Err(DecodeError::ReservedNotZero),
        0 => WeightKind::Gaussian,
        1 => WeightKind::Tent {
            radius: f64::from(reserved) / TENT_UNITS_PER_PX,
        },
        k => return Err(DecodeError::BadWeightKind(k)),
    };
    let expected = encoded_len(usize::from(n_cores) + usize::from(n_deltas), n_anchors);
    if bytes.len() != expected {
        return Err(DecodeError::LengthMismatch {
            expected,
            actual: bytes.len(),
        });
    }

    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("four bytes"))));
    let mut next = || values.next().expect("length checked above");
    let lambda = next();
    let r = next();
    let rotation = next();
    let translation = (next(), next());
    let mut point = || Complex64::new(next(), next());
    let cores = (0..n_cores).map(|_| point()).collect();
    let deltas = (0..n_deltas).map(|_| point()).collect();
    let anchors = (0..n_anchors)
        .map(|_| AnchorPoint {
            a: next(),
            b: next(),
            theta: next(),
            sigma1: next(),
            sigma2: next(),
        })
        .collect();
    let model = XqdModel {
        qd: QdParams {
            r,
            lambda,
            rotation,
            translation,
            cores,
            deltas,
        },
        anchors,
        weight,
        extent,
    };
    model.validate()?;
    Ok(model)
}

/// Size comparison between a raster field and its encoded model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CompressionStats {
    pub raster_bytes: usize,
    pub xqd_bytes: usize,
    pub factor: f64,
}

impl CompressionStats {
    pub fn from_sizes(raster_bytes: usize, xqd_bytes: usize) -> Self {
        CompressionStats {
            raster_bytes,
            xqd_bytes,
            factor: raster_bytes as f64 / xqd_bytes as f64,
        }
    }
}

/// Compression factor of `model` against a raster of `raster_bytes`.
pub fn compression_stats(model: &XqdModel, raster_bytes: usize) -> CompressionStats {
    CompressionStats::from_sizes(
        raster_bytes,
        encoded_len(model.qd.singular_count(), model.anchors.len()),
    )
}
