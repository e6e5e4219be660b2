//! Compression strategies: how many anchors to spend and how much of the
//! model to re-optimize after each insertion.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::field::Mark;
use crate::qd::QdParams;
use crate::xqd::XqdModel;

use super::{
    check_marks, deadline_after, fit_qd, mark_spacing, mean_deviation, optimize, place_anchor,
    FitError, OptimizeCaps, ParamSelection, SingularPoints, StopReason,
};

/// Consecutive rejected insertions after which a fit gives up.
const MAX_REJECTIONS: usize = 3;

/// Deviation (degrees) below which further anchors are not worth adding.
pub const RESOLUTION_FLOOR_DEG: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyName {
    S1,
    S2,
    S3,
    S4,
}

impl std::str::FromStr for StrategyName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(StrategyName::S1),
            "S2" => Ok(StrategyName::S2),
            "S3" => Ok(StrategyName::S3),
            "S4" => Ok(StrategyName::S4),
            _ => Err(format!("unknown strategy {s:?}; expected S1, S2, S3 or S4")),
        }
    }
}

/// Which parameters move after an anchor is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reoptimization {
    /// Only the anchor just added.
    NewAnchorOnly,
    /// The new anchor, and every `n`-th insertion all anchors.
    AllAnchorsEvery(usize),
    /// All anchors and the global frame. Singular points stay where they
    /// were marked.
    Everything,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitStrategy {
    pub name: StrategyName,
    pub max_anchors: usize,
    pub reoptimization: Reoptimization,
    /// Stop adding anchors once the mean deviation reaches this value.
    pub target_deviation_deg: Option<f64>,
    /// Wall-clock budget for the whole fit.
    pub max_seconds: Option<f64>,
    /// Initial anchor spread; three mark spacings when absent.
    pub sigma_init: Option<f64>,
    /// Iteration cap for each optimizer call.
    pub max_iterations: usize,
}

impl FitStrategy {
    pub fn preset(name: StrategyName) -> Self {
        let (max_anchors, reoptimization) = match name {
            StrategyName::S1 => (3, Reoptimization::NewAnchorOnly),
            StrategyName::S2 => (8, Reoptimization::AllAnchorsEvery(3)),
            StrategyName::S3 => (20, Reoptimization::AllAnchorsEvery(1)),
            StrategyName::S4 => (20, Reoptimization::Everything),
        };
        FitStrategy {
            name,
            max_anchors,
            reoptimization,
            target_deviation_deg: None,
            max_seconds: None,
            sigma_init: None,
            max_iterations: super::DEFAULT_MAX_ITERATIONS,
        }
    }

    pub fn s1() -> Self {
        Self::preset(StrategyName::S1)
    }
    pub fn s2() -> Self {
        Self::preset(StrategyName::S2)
    }
    pub fn s3() -> Self {
        Self::preset(StrategyName::S3)
    }
    pub fn s4() -> Self {
        Self::preset(StrategyName::S4)
    }

    pub fn with_target(mut self, deg: f64) -> Self {
        self.target_deviation_deg = Some(deg);
        self
    }

    pub fn with_budget(mut self, seconds: f64) -> Self {
        self.max_seconds = Some(seconds);
        self
    }

    fn selection_after(&self, inserted: usize) -> ParamSelection {
        match self.reoptimization {
            Reoptimization::NewAnchorOnly => ParamSelection::last_anchor(),
            Reoptimization::AllAnchorsEvery(n) if n > 0 && inserted.is_multiple_of(n) => {
                ParamSelection::all_anchors()
            }
            Reoptimization::AllAnchorsEvery(_) => ParamSelection::last_anchor(),
            Reoptimization::Everything => ParamSelection {
                singular_points: false,
                ..ParamSelection::everything()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub strategy: StrategyName,
    pub final_objective: f64,
    /// Mean deviation over the marks, in degrees.
    pub deviation_deg: f64,
    pub anchors_used: usize,
    pub iterations: usize,
    pub wall_time_s: f64,
    /// Objective after the global fit and after every accepted step since.
    pub objective_trace: Vec<f64>,
    /// The time budget ran out before the fit finished.
    pub budget_exhausted: bool,
    /// The global fit stopped on its own rather than on a cap.
    pub converged: bool,
}

/// Fits an XQD model from the default starting frame.
pub fn fit_xqd(
    marks: &[Mark],
    singular: &SingularPoints,
    strategy: &FitStrategy,
) -> Result<(XqdModel, FitReport), FitError> {
    fit_xqd_with(marks, singular, strategy, None)
}

/// Fits an XQD model: global model first, then greedy anchor insertion with
/// the strategy's re-optimization policy.
pub fn fit_xqd_with(
    marks: &[Mark],
    singular: &SingularPoints,
    strategy: &FitStrategy,
    init: Option<QdParams>,
) -> Result<(XqdModel, FitReport), FitError> {
    check_marks(marks)?;
    let start = Instant::now();
    let caps = OptimizeCaps {
        max_iterations: strategy.max_iterations,
        deadline: deadline_after(start, strategy.max_seconds),
    };
    let sigma = strategy
        .sigma_init
        .unwrap_or_else(|| 3.0 * mark_spacing(marks));
    let floor = strategy
        .target_deviation_deg
        .map_or(RESOLUTION_FLOOR_DEG, |t| t.max(RESOLUTION_FLOOR_DEG));

    let global = fit_qd(marks, singular, init, &caps)?;
    let converged = !global.stop.exhausted();
    let mut budget_exhausted = global.stop == StopReason::Deadline;
    let mut model = global.model;
    let mut value = global.objective;
    let mut iterations = global.iterations;
    let mut trace = vec![global.trace[0]];
    extend_monotone(&mut trace, &global.trace);

    let mut inserted = 0;
    let mut rejected = Vec::new();
    while inserted < strategy.max_anchors && !budget_exhausted && rejected.len() < MAX_REJECTIONS {
        if mean_deviation(&model, marks)? <= floor {
            break;
        }
        if caps.deadline.is_some_and(|d| Instant::now() >= d) {
            budget_exhausted = true;
            break;
        }
        let Some((at, candidate)) = place_anchor(&model, marks, sigma, &rejected) else {
            break;
        };
        let out = optimize(
            &candidate,
            marks,
            &strategy.selection_after(inserted + 1),
            &caps,
        )?;
        iterations += out.iterations;
        budget_exhausted = out.stop == StopReason::Deadline;
        // An anchor that does not pay for itself is dropped; the next
        // attempt goes to the next-worst mark.
        if !(out.objective < value) {
            rejected.push(at);
            continue;
        }
        rejected.clear();
        extend_monotone(&mut trace, &out.trace);
        model = out.model;
        value = out.objective;
        inserted += 1;
    }

    let deviation_deg = mean_deviation(&model, marks)?;
    let report = FitReport {
        strategy: strategy.name,
        final_objective: value,
        deviation_deg,
        anchors_used: model.anchors.len(),
        iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
        objective_trace: trace,
        budget_exhausted,
        converged,
    };
    Ok((model, report))
}

/// Appends the values of `steps` that improve on the trace so far.
fn extend_monotone(trace: &mut Vec<f64>, steps: &[f64]) {
    for &v in steps {
        if trace.last().is_none_or(|&last| v < last) {
            trace.push(v);
        }
    }
}
