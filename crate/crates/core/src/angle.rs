//! Arithmetic on undirected orientations.
//!
//! Orientations are stored in radians in the half-open interval [−π/2, π/2).
//! Two orientations that differ by a multiple of π describe the same ridge
//! direction.

use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("invalid angle: {0} is not finite")]
pub struct InvalidAngle(pub f64);

/// Wraps `angle` into [−π/2, π/2), keeping its class mod π.
pub fn wrap_half_pi(angle: f64) -> Result<f64, InvalidAngle> {
    if !angle.is_finite() {
        return Err(InvalidAngle(angle));
    }
    Ok(wrap_unchecked(angle))
}

/// [`wrap_half_pi`] without the finiteness check. Non-finite input yields NaN.
#[inline]
pub fn wrap_unchecked(angle: f64) -> f64 {
    if (-FRAC_PI_2..FRAC_PI_2).contains(&angle) {
        return angle;
    }
    let mut w = (angle + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    // rem_euclid can round up to exactly π for tiny negative inputs.
    if w >= FRAC_PI_2 {
        w -= PI;
    }
    if w < -FRAC_PI_2 {
        w = -FRAC_PI_2;
    }
    w
}

/// Undirected difference between two orientations, in degrees within [0, 90].
pub fn angular_deviation(a: f64, b: f64) -> Result<f64, InvalidAngle> {
    if !a.is_finite() {
        return Err(InvalidAngle(a));
    }
    if !b.is_finite() {
        return Err(InvalidAngle(b));
    }
    Ok(deviation_unchecked(a, b))
}

#[inline]
pub(crate) fn deviation_unchecked(a: f64, b: f64) -> f64 {
    let d = (a - b).to_degrees().rem_euclid(180.0);
    d.min(180.0 - d).max(0.0)
}

/// Converts a boundary value in degrees to an internal orientation.
pub fn from_degrees(deg: f64) -> Result<f64, InvalidAngle> {
    wrap_half_pi(deg.to_radians())
}

/// Converts an internal orientation to degrees in [0, 180).
pub fn to_degrees(angle: f64) -> f64 {
    let d = angle.to_degrees().rem_euclid(180.0);
    if d >= 180.0 {
        0.0
    } else {
        d
    }
}
