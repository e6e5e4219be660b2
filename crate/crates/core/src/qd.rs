//! Global quadratic-differential orientation model.
//!
//! The model field is half the argument of a rational function `P` of the
//! complex model coordinate. `P` has second-order zeros at ±R on the real
//! axis; every core contributes a conjugate pair of zeros and every delta a
//! conjugate pair of poles. Below the real axis `P` is identically 1.
//!
//! World (pixel) coordinates reach the model frame by an inverse rigid
//! motion, after which the model-frame ordinate is stretched by λ. Model
//! orientations are rotated back into the world frame.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::wrap_unchecked;
use crate::field::{GridSpec, OrientationField, BACKGROUND};

/// Distance (model units) below which a query point is nudged off a delta.
pub const POLE_EPSILON: f64 = 1e-6;

pub const MAX_CORES: usize = 2;
pub const MAX_DELTAS: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QdError {
    #[error("R must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("lambda must be positive and finite, got {0}")]
    InvalidStretch(f64),
    #[error("frame parameters must be finite")]
    InvalidFrame,
    #[error(
        "at most {MAX_CORES} cores and {MAX_DELTAS} deltas are allowed, got {cores} and {deltas}"
    )]
    TooManySingularities { cores: usize, deltas: usize },
    #[error("singular point {0} is not in the upper half-plane")]
    NotUpperHalfPlane(Complex64),
}

/// Parameters of the global model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdParams {
    /// Abscissa offset of the two arch singularities at ±R.
    pub r: f64,
    /// Vertical stretch applied to the model-frame ordinate.
    pub lambda: f64,
    /// Rotation of the model frame relative to the world frame.
    pub rotation: f64,
    /// World position of the model origin.
    pub translation: (f64, f64),
    /// Core positions in stretched model coordinates.
    pub cores: Vec<Complex64>,
    /// Delta positions in stretched model coordinates.
    pub deltas: Vec<Complex64>,
}

impl QdParams {
    /// Arch model (no cores or deltas).
    pub fn arch(r: f64, lambda: f64, rotation: f64, translation: (f64, f64)) -> Self {
        QdParams {
            r,
            lambda,
            rotation,
            translation,
            cores: Vec::new(),
            deltas: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), QdError> {
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(QdError::InvalidScale(self.r));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(QdError::InvalidStretch(self.lambda));
        }
        if !(self.rotation.is_finite()
            && self.translation.0.is_finite()
            && self.translation.1.is_finite())
        {
            return Err(QdError::InvalidFrame);
        }
        if self.cores.len() > MAX_CORES || self.deltas.len() > MAX_DELTAS {
            return Err(QdError::TooManySingularities {
                cores: self.cores.len(),
                deltas: self.deltas.len(),
            });
        }
        for &s in self.cores.iter().chain(&self.deltas) {
            if !(s.re.is_finite() && s.im.is_finite() && s.im > 0.0) {
                return Err(QdError::NotUpperHalfPlane(s));
            }
        }
        Ok(())
    }

    pub fn singular_count(&self) -> usize {
        self.cores.len() + self.deltas.len()
    }

    /// Maps a world point to the stretched complex model coordinate.
    #[inline]
    pub fn to_model(&self, x: f64, y: f64) -> Complex64 {
        let (s, c) = self.rotation.sin_cos();
        let dx = x - self.translation.0;
        let dy = y - self.translation.1;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        Complex64::new(u, self.lambda * v)
    }

    /// Inverse of [`QdParams::to_model`].
    pub fn to_world(&self, z: Complex64) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let u = z.re;
        let v = z.im / self.lambda;
        (
            c * u - s * v + self.translation.0,
            s * u + c * v + self.translation.1,
        )
    }

    /// World positions of the cores.
    pub fn cores_world(&self) -> Vec<(f64, f64)> {
        self.cores.iter().map(|&z| self.to_world(z)).collect()
    }

    /// World positions of the deltas.
    pub fn deltas_world(&self) -> Vec<(f64, f64)> {
        self.deltas.iter().map(|&z| self.to_world(z)).collect()
    }

    /// Replaces the singular points with the model coordinates of the given
    /// world positions under the current frame.
    pub fn set_singular_world(&mut self, cores: &[(f64, f64)], deltas: &[(f64, f64)]) {
        self.cores = cores.iter().map(|&(x, y)| self.to_model(x, y)).collect();
        self.deltas = deltas.iter().map(|&(x, y)| self.to_model(x, y)).collect();
    }
}

/// Evaluates `P(z)` for the configured singular points.
pub fn qd_polynomial(z: Complex64, params: &QdParams) -> Complex64 {
    if !(z.im > 0.0) {
        return Complex64::new(1.0, 0.0);
    }
    let z = pole_guard(z, &params.deltas);
    let base = z * z - params.r * params.r;
    let mut num = base * base;
    for &g in &params.cores {
        num *= conjugate_pair(z, g);
    }
    let mut den = Complex64::new(1.0, 0.0);
    for &d in &params.deltas {
        den *= conjugate_pair(z, d);
    }
    num / den
}

#[inline]
fn conjugate_pair(z: Complex64, s: Complex64) -> Complex64 {
    (z - s) * (z - s.conj())
}

#[inline]
fn pole_guard(z: Complex64, deltas: &[Complex64]) -> Complex64 {
    if deltas.iter().any(|&d| (z - d).norm() < POLE_EPSILON) {
        z + Complex64::new(POLE_EPSILON, POLE_EPSILON)
    } else {
        z
    }
}

/// Principal argument in [−π, π).
#[inline]
pub fn principal_arg(z: Complex64) -> f64 {
    let a = z.im.atan2(z.re);
    if a >= PI {
        -PI
    } else {
        a
    }
}

/// Model orientation at world point (x, y), in [−π/2, π/2).
#[inline]
pub fn qd_orientation(x: f64, y: f64, params: &QdParams) -> f64 {
    let z = params.to_model(x, y);
    let model = 0.5 * principal_arg(qd_polynomial(z, params));
    wrap_unchecked(model + params.rotation)
}

/// Samples the model at every foreground cell of `grid`.
pub fn evaluate_qd_field(params: &QdParams, grid: &GridSpec, mask: &[bool]) -> OrientationField {
    sample_field(grid, mask, |x, y| qd_orientation(x, y, params))
}

pub(crate) fn sample_field(
    grid: &GridSpec,
    mask: &[bool],
    mut f: impl FnMut(f64, f64) -> f64,
) -> OrientationField {
    assert_eq!(mask.len(), grid.len(), "mask length must match the grid");
    let angles = mask
        .iter()
        .enumerate()
        .map(|(i, &fg)| {
            if fg {
                let (x, y) = grid.point_at(i);
                f(x, y)
            } else {
                BACKGROUND
            }
        })
        .collect();
    OrientationField::new(*grid, angles, mask.to_vec()).expect("sampled angles are finite")
}
