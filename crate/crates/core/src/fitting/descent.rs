//! Preconditioned steepest descent with backtracking.

use std::time::Instant;

use super::eval::Evaluator;

pub const ARMIJO: f64 = 1e-4;
pub const MAX_HALVINGS: usize = 40;
pub const DEFAULT_MAX_ITERATIONS: usize = 500;

/// Relative decrease over this many iterations below which descent stops.
const STALL_WINDOW: usize = 10;
const STALL_TOLERANCE: f64 = 1e-7;
const FINE_STEP_SCALE: f64 = 1.0 / 16.0;

/// Iteration and time limits for one optimizer call.
#[derive(Debug, Clone, Copy)]
pub struct OptimizeCaps {
    pub max_iterations: usize,
    pub deadline: Option<Instant>,
}

impl Default for OptimizeCaps {
    fn default() -> Self {
        OptimizeCaps {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            deadline: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Gradient vanished or the objective reached zero.
    Converged,
    /// Progress over the last few iterations became negligible.
    Stalled,
    LineSearchFailed,
    IterationCap,
    Deadline,
    /// Nothing to optimize.
    Empty,
}

impl StopReason {
    /// Whether the run ended on a budget rather than on its own.
    pub fn exhausted(self) -> bool {
        matches!(self, StopReason::IterationCap | StopReason::Deadline)
    }
}

pub(crate) struct DescentOutcome {
    pub iterations: usize,
    pub trace: Vec<f64>,
    pub stop: StopReason,
}

pub(crate) fn descend(
    ev: &mut Evaluator<'_>,
    indices: &[usize],
    caps: &OptimizeCaps,
) -> DescentOutcome {
    let mut trace = vec![ev.value()];
    if indices.is_empty() || !ev.value().is_finite() {
        return DescentOutcome {
            iterations: 0,
            trace,
            stop: StopReason::Empty,
        };
    }
    let mut prev_step: Option<(Vec<f64>, Vec<f64>)> = None; // (scaled step, scaled gradient)
    let mut alpha_prev = f64::NAN;
    let mut iterations = 0;
    let stop = loop {
        if ev.value() <= f64::MIN_POSITIVE {
            break StopReason::Converged;
        }
        if iterations >= caps.max_iterations {
            break StopReason::IterationCap;
        }
        if caps.deadline.is_some_and(|d| Instant::now() >= d) {
            break StopReason::Deadline;
        }
        let state = ev.state().to_vec();
        let scales: Vec<f64> = indices
            .iter()
            .map(|&i| ev.layout().scale(i, state[i]))
            .collect();
        let mut step = None;
        let mut flat = false;
        // A failed search is retried once with a much finer difference step.
        for step_scale in [1.0, FINE_STEP_SCALE] {
            let grad = ev.descent_gradient(indices, step_scale);
            let gy: Vec<f64> = grad.iter().zip(&scales).map(|(g, s)| g * s).collect();
            let gnorm2: f64 = gy.iter().map(|g| g * g).sum();
            if !(gnorm2 > 1e-300) || !gnorm2.is_finite() {
                flat = true;
                break;
            }
            let alpha = initial_step(&gy, prev_step.as_ref(), alpha_prev);
            if let Some((trial, alpha)) =
                line_search(ev, indices, &state, &gy, &scales, alpha, gnorm2)
            {
                step = Some((trial, alpha, gy));
                break;
            }
        }
        if flat {
            break StopReason::Converged;
        }
        let Some((trial, alpha, gy)) = step else {
            break StopReason::LineSearchFailed;
        };
        ev.commit(trial);
        iterations += 1;
        trace.push(ev.value());
        prev_step = Some((gy.iter().map(|g| -alpha * g).collect(), gy));
        alpha_prev = alpha;

        if trace.len() > STALL_WINDOW {
            let old = trace[trace.len() - 1 - STALL_WINDOW];
            if old - ev.value() <= STALL_TOLERANCE * ev.value() {
                break StopReason::Stalled;
            }
        }
    };
    DescentOutcome {
        iterations,
        trace,
        stop,
    }
}

/// Barzilai-Borwein length for the first trial step, capped so that no
/// parameter moves by more than a few natural scales.
fn initial_step(gy: &[f64], prev: Option<&(Vec<f64>, Vec<f64>)>, alpha_prev: f64) -> f64 {
    let gmax = gy.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let alpha = match prev {
        Some((sy, g_old)) => {
            let ss: f64 = sy.iter().map(|s| s * s).sum();
            let sdg: f64 = sy
                .iter()
                .zip(gy.iter().zip(g_old))
                .map(|(s, (g, go))| s * (g - go))
                .sum();
            if sdg > 0.0 {
                ss / sdg
            } else {
                2.0 * alpha_prev
            }
        }
        None => 1.0 / gmax,
    };
    alpha.min(5.0 / gmax)
}

/// Backtracking by halving until the Armijo condition holds.
fn line_search(
    ev: &Evaluator<'_>,
    indices: &[usize],
    state: &[f64],
    gy: &[f64],
    scales: &[f64],
    mut alpha: f64,
    gnorm2: f64,
) -> Option<(Vec<f64>, f64)> {
    let f0 = ev.value();
    for _ in 0..=MAX_HALVINGS {
        let mut trial = state.to_vec();
        for ((&i, g), s) in indices.iter().zip(gy).zip(scales) {
            trial[i] -= alpha * g * s;
        }
        let f = ev.value_at(&trial);
        if f.is_finite() && f <= f0 - ARMIJO * alpha * gnorm2 {
            return Some((trial, alpha));
        }
        alpha *= 0.5;
    }
    None
}
