//! Ratio-field refinement with tent updates.
//!
//! The ratio field `f = exp(2i(A_T − A_Q))` measures, on the doubled-angle
//! circle, how far a model is from a target field. Each refinement step
//! pulls `f` towards the target inside a tent of radius `r` around a point
//! `p`. Repeating this over a covering of the field with `r` tied to the
//! current error shrinks the sup-error geometrically.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use thiserror::Error;

use crate::field::{FieldError, GridSpec, OrientationField};
use crate::qd::{qd_orientation, QdParams};

/// Lower bound for the Lipschitz estimate.
pub const LIPSCHITZ_FLOOR: f64 = 1e-6;
/// Multiplier applied to the largest observed difference quotient.
pub const LIPSCHITZ_SAFETY: f64 = 1.5;
/// Cells closer than this to a singular point are left out of the estimate.
pub const SINGULAR_EXCLUSION_PX: f64 = 2.0;
/// Covering radius as a fraction of the tent radius.
pub const COVER_FRACTION: f64 = 0.13;
pub const DEFAULT_MAX_OUTER: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefineError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("ratio fields live on different grids or masks")]
    Mismatch,
    #[error("error target must be positive, got {0}")]
    BadTarget(f64),
}

/// Unit complex ratio per foreground cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioField {
    grid: GridSpec,
    values: Vec<Complex64>,
    mask: Vec<bool>,
    /// World positions of the singular points of the model the ratio was
    /// taken against.
    singular: Vec<(f64, f64)>,
    lipschitz: f64,
    /// Cells where a step met exactly antipodal values and kept the old one.
    degenerate: usize,
}

impl RatioField {
    /// Ratio field from raw values. Background entries are ignored and
    /// foreground values are normalized to unit modulus.
    pub fn new(
        grid: GridSpec,
        values: Vec<Complex64>,
        mask: Vec<bool>,
        singular: Vec<(f64, f64)>,
    ) -> Result<Self, RefineError> {
        grid.validate()?;
        if values.len() != grid.len() || mask.len() != grid.len() {
            return Err(FieldError::CellCount {
                expected: grid.len(),
                actual: values.len().min(mask.len()),
            }
            .into());
        }
        let values = values
            .into_iter()
            .zip(&mask)
            .map(|(v, &fg)| {
                if fg {
                    normalize(v).unwrap_or(Complex64::new(1.0, 0.0))
                } else {
                    Complex64::new(1.0, 0.0)
                }
            })
            .collect();
        let mut f = RatioField {
            grid,
            values,
            mask,
            singular,
            lipschitz: LIPSCHITZ_FLOOR,
            degenerate: 0,
        };
        f.lipschitz = estimate_lipschitz(&f);
        Ok(f)
    }

    /// Constant field `1` on the foreground of `like`.
    pub fn identity_like(like: &RatioField) -> Self {
        let mut f = like.clone();
        f.values
            .iter_mut()
            .for_each(|v| *v = Complex64::new(1.0, 0.0));
        f.lipschitz = LIPSCHITZ_FLOOR;
        f.degenerate = 0;
        f
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
    pub fn singular_points(&self) -> &[(f64, f64)] {
        &self.singular
    }
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    pub fn degenerate_count(&self) -> usize {
        self.degenerate
    }

    /// Foreground cells as `(index, x, y)`.
    fn foreground(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| {
                let (x, y) = self.grid.point_at(i);
                (i, x, y)
            })
    }

    /// Value at an arbitrary point: bilinear on the four surrounding cells
    /// when all are foreground, else the nearest foreground cell.
    pub fn sample(&self, x: f64, y: f64) -> Complex64 {
        let g = &self.grid;
        let s = g.spacing();
        let u = (x - g.origin_px.0) / s;
        let v = (y - g.origin_px.1) / s;
        let (c0, r0) = (u.floor(), v.floor());
        if c0 >= 0.0 && r0 >= 0.0 && (c0 as usize) + 1 < g.cols && (r0 as usize) + 1 < g.rows {
            let (c, r) = (c0 as usize, r0 as usize);
            let idx = [
                g.index(c, r),
                g.index(c + 1, r),
                g.index(c, r + 1),
                g.index(c + 1, r + 1),
            ];
            if idx.iter().all(|&i| self.mask[i]) {
                let (fu, fv) = (u - c0, v - r0);
                let w = [
                    (1.0 - fu) * (1.0 - fv),
                    fu * (1.0 - fv),
                    (1.0 - fu) * fv,
                    fu * fv,
                ];
                let z: Complex64 = idx.iter().zip(w).map(|(&i, w)| self.values[i] * w).sum();
                if let Some(z) = normalize(z) {
                    return z;
                }
            }
        }
        self.nearest(x, y)
    }

    fn nearest(&self, x: f64, y: f64) -> Complex64 {
        self.foreground()
            .min_by(|a, b| {
                let da = (a.1 - x).powi(2) + (a.2 - y).powi(2);
                let db = (b.1 - x).powi(2) + (b.2 - y).powi(2);
                da.total_cmp(&db)
            })
            .map_or(Complex64::new(1.0, 0.0), |(i, _, _)| self.values[i])
    }

    /// Orientation field obtained by applying this ratio to a model field:
    /// `A_Q + arg(f) / 2`.
    pub fn apply_to(&self, qd: &QdParams) -> OrientationField {
        let angles = (0..self.grid.len())
            .map(|i| {
                if !self.mask[i] {
                    return crate::field::BACKGROUND;
                }
                let (x, y) = self.grid.point_at(i);
                crate::angle::wrap_unchecked(qd_orientation(x, y, qd) + 0.5 * self.values[i].arg())
            })
            .collect();
        OrientationField::new(self.grid, angles, self.mask.clone()).expect("angles are finite")
    }

    fn same_support(&self, other: &RatioField) -> bool {
        self.grid == other.grid && self.mask == other.mask
    }
}

fn normalize(z: Complex64) -> Option<Complex64> {
    let n = z.norm();
    if n > 0.0 && n.is_finite() {
        Some(z / n)
    } else {
        None
    }
}

/// Ratio field `exp(2i(A_T − A_Q))` of a target field against a model.
pub fn ratio_field(truth: &OrientationField, qd: &QdParams) -> Result<RatioField, RefineError> {
    if truth.foreground_count() == 0 {
        return Err(FieldError::EmptyMask.into());
    }
    let grid = *truth.grid();
    let values = (0..grid.len())
        .map(|i| match truth.angle(i) {
            Some(a) => {
                let (x, y) = grid.point_at(i);
                Complex64::from_polar(1.0, 2.0 * (a - qd_orientation(x, y, qd)))
            }
            None => Complex64::new(1.0, 0.0),
        })
        .collect();
    let singular = qd
        .cores_world()
        .into_iter()
        .chain(qd.deltas_world())
        .collect();
    RatioField::new(grid, values, truth.mask().to_vec(), singular)
}

/// Tent weight `(1 − |z − p| / r)⁺`.
#[inline]
pub fn tent(z: (f64, f64), p: (f64, f64), r: f64) -> f64 {
    (1.0 - (z.0 - p.0).hypot(z.1 - p.1) / r).max(0.0)
}

/// One tent update of `f_n` towards `f_true(p)`. Cells at distance `r` or
/// more from `p` are returned untouched.
pub fn refine_step(
    f_n: &RatioField,
    f_true: &RatioField,
    p: (f64, f64),
    r: f64,
) -> Result<RatioField, RefineError> {
    if !f_n.same_support(f_true) {
        return Err(RefineError::Mismatch);
    }
    let mut out = f_n.clone();
    apply_step(&mut out, f_true.sample(p.0, p.1), p, r);
    Ok(out)
}

fn apply_step(f: &mut RatioField, target: Complex64, p: (f64, f64), r: f64) {
    let g = f.grid;
    let s = g.spacing();
    // Only the cells whose centres can lie inside the tent.
    let col_lo = (((p.0 - r - g.origin_px.0) / s).floor().max(0.0)) as usize;
    let row_lo = (((p.1 - r - g.origin_px.1) / s).floor().max(0.0)) as usize;
    let col_hi = (((p.0 + r - g.origin_px.0) / s).ceil()).min(g.cols as f64 - 1.0);
    let row_hi = (((p.1 + r - g.origin_px.1) / s).ceil()).min(g.rows as f64 - 1.0);
    if col_hi < 0.0 || row_hi < 0.0 {
        return;
    }
    for row in row_lo..=row_hi as usize {
        for col in col_lo..=col_hi as usize {
            let i = g.index(col, row);
            if !f.mask[i] {
                continue;
            }
            let h = tent(g.point(col, row), p, r);
            if h == 0.0 {
                continue;
            }
            match normalize(target * h + f.values[i] * (1.0 - h)) {
                Some(z) => f.values[i] = z,
                None => f.degenerate += 1,
            }
        }
    }
}

/// Largest 4-neighbour difference quotient times [`LIPSCHITZ_SAFETY`],
/// ignoring cells next to singular points.
pub fn estimate_lipschitz(f: &RatioField) -> f64 {
    let g = &f.grid;
    let near_singular = |i: usize| {
        let (x, y) = g.point_at(i);
        f.singular
            .iter()
            .any(|&(sx, sy)| (x - sx).hypot(y - sy) < SINGULAR_EXCLUSION_PX)
    };
    let usable: Vec<bool> = (0..g.len())
        .map(|i| f.mask[i] && !near_singular(i))
        .collect();
    let mut best = 0.0f64;
    for row in 0..g.rows {
        for col in 0..g.cols {
            let i = g.index(col, row);
            if !usable[i] {
                continue;
            }
            for (nc, nr) in [(col + 1, row), (col, row + 1)] {
                if nc < g.cols && nr < g.rows {
                    let j = g.index(nc, nr);
                    if usable[j] {
                        best = best.max((f.values[i] - f.values[j]).norm() / g.spacing());
                    }
                }
            }
        }
    }
    (best * LIPSCHITZ_SAFETY).max(LIPSCHITZ_FLOOR)
}

/// Points of a hexagonal lattice such that every foreground cell lies within
/// `radius` of one of them. Each cell contributes its nearest lattice point.
pub fn cover_points(grid: &GridSpec, mask: &[bool], radius: f64) -> Vec<(f64, f64)> {
    assert!(radius > 0.0, "cover radius must be positive");
    // Nearest-point distance on this lattice never exceeds `radius`; the
    // shrink keeps rounding from pushing a corner case just past it.
    let d = radius * 3f64.sqrt() * (1.0 - 1e-9);
    let dy = d * 3f64.sqrt() / 2.0;
    let (ox, oy) = grid.origin_px;
    let lattice = |i: i64, j: i64| {
        let shift = if j.rem_euclid(2) == 1 { 0.5 * d } else { 0.0 };
        (ox + i as f64 * d + shift, oy + j as f64 * dy)
    };
    let mut chosen = BTreeSet::new();
    for (k, &fg) in mask.iter().enumerate() {
        if !fg {
            continue;
        }
        let (x, y) = grid.point_at(k);
        let j0 = ((y - oy) / dy).round() as i64;
        let mut best = (f64::INFINITY, 0i64, 0i64);
        for j in j0 - 1..=j0 + 1 {
            let shift = if j.rem_euclid(2) == 1 { 0.5 * d } else { 0.0 };
            let i0 = ((x - ox - shift) / d).round() as i64;
            for i in i0 - 1..=i0 + 1 {
                let (px, py) = lattice(i, j);
                let dist = (px - x).hypot(py - y);
                if dist < best.0 {
                    best = (dist, j, i);
                }
            }
        }
        chosen.insert((best.1, best.2));
    }
    chosen.into_iter().map(|(j, i)| lattice(i, j)).collect()
}

/// Sup over the foreground of `|f − g|`.
pub fn sup_error(f: &RatioField, g: &RatioField) -> Result<f64, RefineError> {
    if !f.same_support(g) {
        return Err(RefineError::Mismatch);
    }
    Ok(f.values
        .iter()
        .zip(&g.values)
        .zip(&f.mask)
        .filter(|(_, &m)| m)
        .map(|((a, b), _)| (a - b).norm())
        .fold(0.0, f64::max))
}

/// Error, cover size and tent radius per outer iteration. Entry 0 holds the
/// starting error.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct RefineTrace {
    pub epsilons: Vec<f64>,
    pub anchors: Vec<usize>,
    pub radii: Vec<f64>,
}

impl RefineTrace {
    pub fn iterations(&self) -> usize {
        self.epsilons.len().saturating_sub(1)
    }

    pub fn final_epsilon(&self) -> f64 {
        *self.epsilons.last().unwrap_or(&f64::NAN)
    }

    /// `iteration,epsilon,anchors,radius` rows, one per entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,epsilon,anchors,radius\n");
        for (n, ((e, a), r)) in self
            .epsilons
            .iter()
            .zip(&self.anchors)
            .zip(&self.radii)
            .enumerate()
        {
            let _ = writeln!(out, "{n},{e},{a},{r}");
        }
        out
    }
}

/// Refines `f0` towards `f_true` until the sup-error drops to `eps_target`,
/// the outer-iteration cap is reached, or an iteration fails to improve.
pub fn refine_until(
    f0: &RatioField,
    f_true: &RatioField,
    eps_target: f64,
    max_outer: usize,
) -> Result<(RatioField, RefineTrace), RefineError> {
    if !(eps_target > 0.0) {
        return Err(RefineError::BadTarget(eps_target));
    }
    let mut f = f0.clone();
    let mut eps = sup_error(&f, f_true)?;
    let mut trace = RefineTrace {
        epsilons: vec![eps],
        anchors: vec![0],
        radii: vec![0.0],
    };
    let l = f_true.lipschitz;
    while eps > eps_target && trace.iterations() < max_outer {
        let r = eps / l;
        let points = cover_points(&f.grid, &f.mask, COVER_FRACTION * r);
        for &p in &points {
            apply_step(&mut f, f_true.sample(p.0, p.1), p, r);
        }
        let next = sup_error(&f, f_true)?;
        trace.epsilons.push(next);
        trace.anchors.push(points.len());
        trace.radii.push(r);
        if !(next < eps) {
            break;
        }
        eps = next;
    }
    f.lipschitz = estimate_lipschitz(&f);
    Ok((f, trace))
}

/// Smooth synthetic ratio field `exp(i·φ(x, y))` with a phase made of a few
/// low-frequency waves; used by tests and demos.
pub fn smooth_phase_field(
    grid: &GridSpec,
    mask: &[bool],
    waves: &[(f64, f64, f64, f64)],
) -> RatioField {
    let values = (0..grid.len())
        .map(|i| {
            let (x, y) = grid.point_at(i);
            let phase: f64 = waves
                .iter()
                .map(|&(amp, kx, ky, ph)| amp * (2.0 * PI * (kx * x + ky * y) + ph).sin())
                .sum();
            Complex64::from_polar(1.0, phase)
        })
        .collect();
    RatioField::new(*grid, values, mask.to_vec(), Vec::new()).expect("grid and mask sizes agree")
}
