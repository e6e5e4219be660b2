//! Least-squares fitting of XQD models to orientation marks.
//!
//! The objective compares doubled angles on the unit circle, so it is blind
//! to the direction of a ridge. Minimization is plain steepest descent with a
//! finite-difference gradient; anchors are added greedily where the current
//! model is worst.

mod descent;
mod eval;
mod params;
mod strategy;

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::{deviation_unchecked, wrap_unchecked};
use crate::field::Mark;
use crate::qd::{qd_orientation, QdError, QdParams, MAX_CORES, MAX_DELTAS};
use crate::xqd::{xqd_orientation, AnchorPoint, ModelError, XqdModel, MAX_ANCHORS};

pub use descent::{OptimizeCaps, StopReason, ARMIJO, DEFAULT_MAX_ITERATIONS, MAX_HALVINGS};
pub use params::{AnchorFields, AnchorSet, ParamSelection};
pub use strategy::{
    fit_xqd, fit_xqd_with, FitReport, FitStrategy, Reoptimization, StrategyName,
    RESOLUTION_FLOOR_DEG,
};

use eval::Evaluator;
use params::Layout;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("no marks to fit")]
    EmptyMarks,
    #[error("mark {0} has a non-finite position or angle")]
    InvalidMark(usize),
    #[error(
        "at most {MAX_CORES} cores and {MAX_DELTAS} deltas are supported, got {cores} and {deltas}"
    )]
    TooManySingularities { cores: usize, deltas: usize },
    #[error("parameter vector has length {got}, expected {expected}")]
    ParameterLength { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qd(#[from] QdError),
}

/// World positions of the cores and deltas a fit is anchored to.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SingularPoints {
    pub cores: Vec<(f64, f64)>,
    pub deltas: Vec<(f64, f64)>,
}

impl SingularPoints {
    pub fn new(cores: Vec<(f64, f64)>, deltas: Vec<(f64, f64)>) -> Self {
        SingularPoints { cores, deltas }
    }

    /// World positions of the singular points of `qd`.
    pub fn of(qd: &QdParams) -> Self {
        SingularPoints {
            cores: qd.cores_world(),
            deltas: qd.deltas_world(),
        }
    }

    fn check(&self) -> Result<(), FitError> {
        if self.cores.len() > MAX_CORES || self.deltas.len() > MAX_DELTAS {
            return Err(FitError::TooManySingularities {
                cores: self.cores.len(),
                deltas: self.deltas.len(),
            });
        }
        Ok(())
    }
}

/// Result of one optimizer call.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub model: XqdModel,
    pub objective: f64,
    /// Objective before the first step and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
}

fn check_marks(marks: &[Mark]) -> Result<(), FitError> {
    if marks.is_empty() {
        return Err(FitError::EmptyMarks);
    }
    match marks
        .iter()
        .position(|m| !(m.x.is_finite() && m.y.is_finite() && m.theta.is_finite()))
    {
        Some(i) => Err(FitError::InvalidMark(i)),
        None => Ok(()),
    }
}

/// Sum over marks of `|e^{2iA} − e^{2iθ}|²`.
pub fn objective(model: &XqdModel, marks: &[Mark]) -> Result<f64, FitError> {
    check_marks(marks)?;
    Ok(marks
        .iter()
        .map(|m| {
            let a = xqd_orientation(m.x, m.y, model);
            (Complex64::from_polar(1.0, 2.0 * a) - Complex64::from_polar(1.0, 2.0 * m.theta))
                .norm_sqr()
        })
        .sum())
}

/// Per-mark undirected deviation of the model, in degrees.
pub fn mark_deviations(model: &XqdModel, marks: &[Mark]) -> Vec<f64> {
    marks
        .iter()
        .map(|m| deviation_unchecked(xqd_orientation(m.x, m.y, model), m.theta))
        .collect()
}

/// Mean undirected deviation of the model over the marks, in degrees.
pub fn mean_deviation(model: &XqdModel, marks: &[Mark]) -> Result<f64, FitError> {
    check_marks(marks)?;
    Ok(mark_deviations(model, marks).iter().sum::<f64>() / marks.len() as f64)
}

/// Flat parameter vector seen by the optimizer:
/// `[R, λ, rotation, t_x, t_y, singular world positions, anchors]`.
pub fn parameters(model: &XqdModel) -> Vec<f64> {
    params::pack(model)
}

/// Model with the given parameter vector, keeping weight kind and extent.
pub fn with_parameters(model: &XqdModel, values: &[f64]) -> Result<XqdModel, FitError> {
    let layout = Layout::of(model);
    if values.len() != layout.len() {
        return Err(FitError::ParameterLength {
            expected: layout.len(),
            got: values.len(),
        });
    }
    Ok(params::unpack(values, &layout, model.weight, model.extent))
}

/// Finite-difference step for every entry of [`parameters`].
pub fn finite_difference_steps(model: &XqdModel) -> Vec<f64> {
    let layout = Layout::of(model);
    params::pack(model)
        .iter()
        .enumerate()
        .map(|(i, &v)| layout.fd_step(i, v))
        .collect()
}

/// Central finite-difference gradient of the objective with respect to
/// every parameter, each step multiplied by `step_scale`.
pub fn objective_gradient(
    model: &XqdModel,
    marks: &[Mark],
    step_scale: f64,
) -> Result<Vec<f64>, FitError> {
    check_marks(marks)?;
    model.validate()?;
    let layout = Layout::of(model);
    let ev = Evaluator::new(marks, layout, params::pack(model), model.weight);
    let all: Vec<usize> = (0..layout.len()).collect();
    Ok(ev.gradient(&all, step_scale))
}

/// Steepest descent over the selected parameters.
pub fn optimize(
    model: &XqdModel,
    marks: &[Mark],
    which: &ParamSelection,
    caps: &OptimizeCaps,
) -> Result<Optimized, FitError> {
    check_marks(marks)?;
    model.validate()?;
    let layout = Layout::of(model);
    let mut ev = Evaluator::new(marks, layout, params::pack(model), model.weight);
    let indices = layout.indices(which);
    let out = descent::descend(&mut ev, &indices, caps);
    let fitted = if out.iterations == 0 {
        model.clone()
    } else {
        params::unpack(ev.state(), &layout, model.weight, model.extent)
    };
    Ok(Optimized {
        model: fitted,
        objective: ev.value(),
        trace: out.trace,
        iterations: out.iterations,
        stop: out.stop,
    })
}

/// Starting frame for a fit: model origin below the marked region, opening
/// upward, with R a third of the region's width.
pub fn default_init(marks: &[Mark], singular: &SingularPoints) -> Result<QdParams, FitError> {
    check_marks(marks)?;
    singular.check()?;
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for m in marks {
        x0 = x0.min(m.x);
        x1 = x1.max(m.x);
        y0 = y0.min(m.y);
        y1 = y1.max(m.y);
    }
    let width = (x1 - x0).max(y1 - y0).max(1.0);
    let low = singular
        .cores
        .iter()
        .chain(&singular.deltas)
        .fold(y1, |acc, &(_, y)| acc.max(y));
    let margin = 0.1 * width;
    let mut qd = QdParams::arch(
        0.35 * width,
        1.0,
        std::f64::consts::PI,
        (0.5 * (x0 + x1), low + margin),
    );
    qd.set_singular_world(&singular.cores, &singular.deltas);
    Ok(qd)
}

/// Fits the global model with the singular points held at their world
/// positions. Without `init` the fit starts from [`default_init`].
pub fn fit_qd(
    marks: &[Mark],
    singular: &SingularPoints,
    init: Option<QdParams>,
    caps: &OptimizeCaps,
) -> Result<Optimized, FitError> {
    check_marks(marks)?;
    singular.check()?;
    let mut qd = match init {
        Some(qd) => qd,
        None => default_init(marks, singular)?,
    };
    qd.set_singular_world(&singular.cores, &singular.deltas);
    optimize(
        &XqdModel::new(qd),
        marks,
        &ParamSelection::frame_only(),
        caps,
    )
}

/// Index of the worst-fitting mark outside `skip`, first one on ties, or
/// `None` when every such mark already matches.
fn worst_mark(model: &XqdModel, marks: &[Mark], skip: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in marks.iter().enumerate() {
        if skip.contains(&i) {
            continue;
        }
        let d = deviation_unchecked(xqd_orientation(m.x, m.y, model), m.theta);
        if best.is_none_or(|(_, bd)| d > bd) {
            best = Some((i, d));
        }
    }
    best.filter(|&(_, d)| d.to_radians() >= 1e-9)
        .map(|(i, _)| i)
}

/// Appends an anchor at the worst mark outside `skip` without optimizing
/// it. Returns the chosen mark index with the new model.
pub(crate) fn place_anchor(
    model: &XqdModel,
    marks: &[Mark],
    sigma: f64,
    skip: &[usize],
) -> Option<(usize, XqdModel)> {
    if model.anchors.len() >= MAX_ANCHORS {
        return None;
    }
    let i = worst_mark(model, marks, skip)?;
    let m = marks[i];
    // Target chosen so that the corrected model passes through the mark at
    // the anchor centre, on top of whatever earlier anchors contribute there.
    let residual = wrap_unchecked(m.theta - xqd_orientation(m.x, m.y, model));
    let theta = qd_orientation(m.x, m.y, &model.qd) + residual;
    let mut next = model.clone();
    next.anchors
        .push(AnchorPoint::new(m.x, m.y, theta, sigma, sigma));
    Some((i, next))
}

/// Adds one anchor at the worst-fitting mark (isotropic spread `sigma`,
/// target angle matching the mark there) and optimizes that anchor alone. Returns the
/// input unchanged when every mark already matches.
pub fn insert_anchor(
    model: &XqdModel,
    marks: &[Mark],
    sigma: f64,
    caps: &OptimizeCaps,
) -> Result<XqdModel, FitError> {
    check_marks(marks)?;
    model.validate()?;
    match place_anchor(model, marks, sigma, &[]) {
        None => Ok(model.clone()),
        Some((_, next)) => Ok(optimize(&next, marks, &ParamSelection::last_anchor(), caps)?.model),
    }
}

/// Typical spacing between marks: the median nearest-neighbour distance.
pub fn mark_spacing(marks: &[Mark]) -> f64 {
    if marks.len() < 2 {
        return 12.0;
    }
    let mut nn: Vec<f64> = marks
        .iter()
        .enumerate()
        .map(|(i, a)| {
            marks
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| (a.x - b.x).hypot(a.y - b.y))
                .filter(|&d| d > 0.0)
                .fold(f64::INFINITY, f64::min)
        })
        .filter(|d| d.is_finite())
        .collect();
    if nn.is_empty() {
        return 12.0;
    }
    nn.sort_by(|a, b| a.total_cmp(b));
    nn[nn.len() / 2]
}

pub(crate) fn deadline_after(start: Instant, seconds: Option<f64>) -> Option<Instant> {
    seconds.map(|s| start + std::time::Duration::from_secs_f64(s.max(0.0)))
}

#[cfg(test)]
mod tests;
