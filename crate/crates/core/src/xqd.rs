//! Anchor-point corrections on top of a quadratic-differential field.
//!
//! An anchor pulls the model orientation at its center onto a target angle
//! and blends the correction into the neighborhood through a weight
//! function. Corrections from several anchors are summed modulo π in list
//! order; each one is measured against the uncorrected global model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::wrap_unchecked;
use crate::field::{GridSpec, OrientationField};
use crate::qd::{qd_orientation, sample_field, QdError, QdParams};

/// Largest anchor list the binary format can describe.
pub const MAX_ANCHORS: usize = u16::MAX as usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Qd(#[from] QdError),
    #[error("anchor {index}: {reason}")]
    InvalidAnchor { index: usize, reason: String },
    #[error("tent radius must be positive and finite, got {0}")]
    InvalidTentRadius(f64),
}

/// Local orientation correction `(a, b, θ, σ1, σ2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorPoint {
    pub a: f64,
    pub b: f64,
    /// Target orientation at (a, b).
    pub theta: f64,
    /// Spread along the direction θ.
    pub sigma1: f64,
    /// Spread across the direction θ.
    pub sigma2: f64,
}

impl AnchorPoint {
    pub fn new(a: f64, b: f64, theta: f64, sigma1: f64, sigma2: f64) -> Self {
        AnchorPoint {
            a,
            b,
            theta: wrap_unchecked(theta),
            sigma1,
            sigma2,
        }
    }

    fn check(&self) -> Result<(), String> {
        if !(self.a.is_finite() && self.b.is_finite() && self.theta.is_finite()) {
            return Err("position and angle must be finite".into());
        }
        if !(self.sigma1 > 0.0
            && self.sigma2 > 0.0
            && self.sigma1.is_finite()
            && self.sigma2.is_finite())
        {
            return Err(format!(
                "sigmas must be positive, got {} and {}",
                self.sigma1, self.sigma2
            ));
        }
        Ok(())
    }
}

/// Spatial profile of an anchor's influence.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightKind {
    /// Anisotropic Gaussian in the anchor's rotated frame.
    #[default]
    Gaussian,
    /// Compactly supported radial tent `(1 − d/r)⁺`.
    Tent { radius: f64 },
}

/// Image metadata carried alongside a model in the binary header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FieldExtent {
    pub width_px: u16,
    pub height_px: u16,
    pub spacing_px: u8,
}

impl FieldExtent {
    pub fn from_grid(grid: &GridSpec) -> Self {
        let (w, h) = grid.image_size_px();
        FieldExtent {
            width_px: w.min(u16::MAX as usize) as u16,
            height_px: h.min(u16::MAX as usize) as u16,
            spacing_px: grid.spacing_px.min(u32::from(u8::MAX)) as u8,
        }
    }

    /// Sampling grid implied by the extent, if it describes one.
    pub fn grid(&self) -> Option<GridSpec> {
        if self.spacing_px == 0 {
            return None;
        }
        let s = usize::from(self.spacing_px);
        GridSpec::new(
            usize::from(self.width_px) / s,
            usize::from(self.height_px) / s,
            u32::from(self.spacing_px),
        )
        .ok()
    }
}

/// Global model plus an ordered list of anchor points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XqdModel {
    pub qd: QdParams,
    pub anchors: Vec<AnchorPoint>,
    pub weight: WeightKind,
    pub extent: FieldExtent,
}

impl XqdModel {
    pub fn new(qd: QdParams) -> Self {
        XqdModel {
            qd,
            anchors: Vec::new(),
            weight: WeightKind::Gaussian,
            extent: FieldExtent::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.qd.validate()?;
        if let WeightKind::Tent { radius } = self.weight {
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(ModelError::InvalidTentRadius(radius));
            }
        }
        for (index, p) in self.anchors.iter().enumerate() {
            p.check()
                .map_err(|reason| ModelError::InvalidAnchor { index, reason })?;
        }
        Ok(())
    }

    pub fn is_encodable(&self) -> bool {
        self.anchors.len() <= MAX_ANCHORS
    }

    /// Number of real parameters: `5 + 2s + 5n`.
    pub fn parameter_count(&self) -> usize {
        5 + 2 * self.qd.singular_count() + 5 * self.anchors.len()
    }
}

/// Weight of anchor `p` at (x, y), in [0, 1].
#[inline]
pub fn anchor_weight(x: f64, y: f64, p: &AnchorPoint, kind: WeightKind) -> f64 {
    let dx = x - p.a;
    let dy = y - p.b;
    match kind {
        WeightKind::Gaussian => {
            let (s, c) = p.theta.sin_cos();
            let du = c * dx + s * dy;
            let dv = -s * dx + c * dy;
            let q = du * du / (p.sigma1 * p.sigma1) + dv * dv / (p.sigma2 * p.sigma2);
            (-0.5 * q).exp()
        }
        WeightKind::Tent { radius } => (1.0 - dx.hypot(dy) / radius).max(0.0),
    }
}

/// Wrapped difference between an anchor's target and the global model at the
/// anchor center.
#[inline]
pub fn anchor_offset(p: &AnchorPoint, qd: &QdParams) -> f64 {
    wrap_unchecked(p.theta - qd_orientation(p.a, p.b, qd))
}

/// Correction angle of a single anchor at (x, y).
pub fn correction_single(x: f64, y: f64, p: &AnchorPoint, qd: &QdParams, kind: WeightKind) -> f64 {
    anchor_weight(x, y, p, kind) * anchor_offset(p, qd)
}

/// Correction angle of an anchor list at (x, y), accumulated modulo π in list
/// order. An empty list gives no correction.
pub fn correction_multi(
    x: f64,
    y: f64,
    anchors: &[AnchorPoint],
    qd: &QdParams,
    kind: WeightKind,
) -> f64 {
    let mut iter = anchors.iter();
    let Some(first) = iter.next() else {
        return 0.0;
    };
    iter.fold(correction_single(x, y, first, qd, kind), |acc, p| {
        wrap_unchecked(acc + correction_single(x, y, p, qd, kind))
    })
}

/// Corrected model orientation at (x, y), in [−π/2, π/2).
pub fn xqd_orientation(x: f64, y: f64, model: &XqdModel) -> f64 {
    let base = qd_orientation(x, y, &model.qd);
    if model.anchors.is_empty() {
        return base;
    }
    wrap_unchecked(base + correction_multi(x, y, &model.anchors, &model.qd, model.weight))
}

/// Samples the corrected model at every foreground cell of `grid`.
pub fn evaluate_xqd_field(model: &XqdModel, grid: &GridSpec, mask: &[bool]) -> OrientationField {
    let offsets: Vec<f64> = model
        .anchors
        .iter()
        .map(|p| anchor_offset(p, &model.qd))
        .collect();
    sample_field(grid, mask, |x, y| {
        let base = qd_orientation(x, y, &model.qd);
        let mut iter = model.anchors.iter().zip(&offsets);
        match iter.next() {
            None => base,
            Some((p, off)) => {
                let c = iter.fold(
                    anchor_weight(x, y, p, model.weight) * off,
                    |acc, (p, off)| {
                        wrap_unchecked(acc + anchor_weight(x, y, p, model.weight) * off)
                    },
                );
                wrap_unchecked(base + c)
            }
        }
    })
}
