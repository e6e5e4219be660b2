//! Cached objective evaluation.
//!
//! The objective only depends on the corrected angle at each mark, which is
//! the global model angle plus the sum of all anchor corrections (mod π, and
//! the per-mark residual is π-periodic). Caching the global angles, the
//! per-anchor weights and their sum lets a single-parameter perturbation be
//! re-evaluated in O(marks) instead of O(marks × anchors).

use crate::angle::wrap_unchecked;
use crate::field::Mark;
use crate::qd::{qd_orientation, QdParams};
use crate::xqd::{anchor_weight, AnchorPoint, WeightKind};

use super::params::{self, Layout, Slot};

#[inline]
fn residual(angle: f64, target: f64) -> f64 {
    let s = (angle - target).sin();
    4.0 * s * s
}

/// Ratio between one-sided differences taken as evidence of a kink.
const KINK_RATIO: f64 = 10.0;

pub(crate) struct Evaluator<'a> {
    marks: &'a [Mark],
    weight: WeightKind,
    layout: Layout,
    state: Vec<f64>,
    qd: QdParams,
    anchors: Vec<AnchorPoint>,
    /// Global model angle at each mark.
    base: Vec<f64>,
    /// Wrapped target offset of each anchor.
    offsets: Vec<f64>,
    /// Row `k` holds anchor `k`'s weight at every mark.
    weights: Vec<f64>,
    /// Summed correction at each mark.
    corr: Vec<f64>,
    value: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(marks: &'a [Mark], layout: Layout, state: Vec<f64>, weight: WeightKind) -> Self {
        let mut ev = Evaluator {
            marks,
            weight,
            layout,
            state: Vec::new(),
            qd: QdParams::arch(1.0, 1.0, 0.0, (0.0, 0.0)),
            anchors: Vec::new(),
            base: Vec::new(),
            offsets: Vec::new(),
            weights: Vec::new(),
            corr: Vec::new(),
            value: f64::INFINITY,
        };
        ev.commit(state);
        ev
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Replaces the cached state.
    pub fn commit(&mut self, mut state: Vec<f64>) {
        for k in 0..self.layout.n_anchors {
            let i = self.layout.anchor_start() + params::ANCHOR_LEN * k + params::ANCHOR_THETA;
            state[i] = wrap_unchecked(state[i]);
        }
        let m = self.marks.len();
        self.qd = params::unpack_qd(&state, &self.layout);
        self.anchors = (0..self.layout.n_anchors)
            .map(|k| params::unpack_anchor(&state, &self.layout, k))
            .collect();
        self.state = state;
        let admissible =
            params::qd_admissible(&self.qd) && self.anchors.iter().all(params::anchor_admissible);
        if !admissible {
            self.value = f64::INFINITY;
            return;
        }
        self.base = self
            .marks
            .iter()
            .map(|mk| qd_orientation(mk.x, mk.y, &self.qd))
            .collect();
        self.offsets = self
            .anchors
            .iter()
            .map(|p| wrap_unchecked(p.theta - qd_orientation(p.a, p.b, &self.qd)))
            .collect();
        self.weights = Vec::with_capacity(self.anchors.len() * m);
        for p in &self.anchors {
            self.weights.extend(
                self.marks
                    .iter()
                    .map(|mk| anchor_weight(mk.x, mk.y, p, self.weight)),
            );
        }
        self.corr = vec![0.0; m];
        for (row, off) in self.weights.chunks_exact(m.max(1)).zip(&self.offsets) {
            for (c, w) in self.corr.iter_mut().zip(row) {
                *c += w * off;
            }
        }
        self.value = self.sum_residuals(|j| self.base[j] + self.corr[j]);
    }

    fn sum_residuals(&self, angle: impl Fn(usize) -> f64) -> f64 {
        self.marks
            .iter()
            .enumerate()
            .map(|(j, mk)| residual(angle(j), mk.theta))
            .sum()
    }

    /// Objective at an arbitrary state, without touching the cache.
    pub fn value_at(&self, state: &[f64]) -> f64 {
        let qd = params::unpack_qd(state, &self.layout);
        if !params::qd_admissible(&qd) {
            return f64::INFINITY;
        }
        let anchors: Vec<AnchorPoint> = (0..self.layout.n_anchors)
            .map(|k| params::unpack_anchor(state, &self.layout, k))
            .collect();
        if !anchors.iter().all(params::anchor_admissible) {
            return f64::INFINITY;
        }
        let offsets: Vec<f64> = anchors
            .iter()
            .map(|p| wrap_unchecked(p.theta - qd_orientation(p.a, p.b, &qd)))
            .collect();
        self.marks
            .iter()
            .map(|mk| {
                let mut a = qd_orientation(mk.x, mk.y, &qd);
                for (p, off) in anchors.iter().zip(&offsets) {
                    a += anchor_weight(mk.x, mk.y, p, self.weight) * off;
                }
                residual(a, mk.theta)
            })
            .sum()
    }

    /// Objective with state entry `i` replaced by `v`, reusing the cache.
    pub fn value_with(&self, i: usize, v: f64) -> f64 {
        let m = self.marks.len();
        match self.layout.slot(i) {
            Slot::Frame(_) | Slot::Singular => {
                let mut state = self.state.clone();
                state[i] = v;
                let qd = params::unpack_qd(&state, &self.layout);
                if !params::qd_admissible(&qd) {
                    return f64::INFINITY;
                }
                let offsets: Vec<f64> = self
                    .anchors
                    .iter()
                    .map(|p| wrap_unchecked(p.theta - qd_orientation(p.a, p.b, &qd)))
                    .collect();
                let mut angles: Vec<f64> = self
                    .marks
                    .iter()
                    .map(|mk| qd_orientation(mk.x, mk.y, &qd))
                    .collect();
                for (row, off) in self.weights.chunks_exact(m.max(1)).zip(&offsets) {
                    for (a, w) in angles.iter_mut().zip(row) {
                        *a += w * off;
                    }
                }
                self.sum_residuals(|j| angles[j])
            }
            Slot::Anchor { index, field } => {
                let mut p = self.anchors[index];
                match field {
                    0 => p.a = v,
                    1 => p.b = v,
                    2 => p.theta = v,
                    3 => p.sigma1 = v,
                    _ => p.sigma2 = v,
                }
                if !params::anchor_admissible(&p) {
                    return f64::INFINITY;
                }
                let off_old = self.offsets[index];
                let off_new = wrap_unchecked(p.theta - qd_orientation(p.a, p.b, &self.qd));
                let row = &self.weights[index * m..(index + 1) * m];
                self.sum_residuals(|j| {
                    let mk = &self.marks[j];
                    let w_new = anchor_weight(mk.x, mk.y, &p, self.weight);
                    self.base[j] + self.corr[j] - row[j] * off_old + w_new * off_new
                })
            }
        }
    }

    /// Central finite-difference gradient over `indices`, with every step
    /// multiplied by `step_scale`.
    pub fn gradient(&self, indices: &[usize], step_scale: f64) -> Vec<f64> {
        self.differences(indices, step_scale, false)
    }

    /// Like [`Evaluator::gradient`], but where one of the forward and backward
    /// differences dwarfs the other (a wrap jump or a singular point inside
    /// the stencil) the smaller of the two is used instead of their mean.
    pub fn descent_gradient(&self, indices: &[usize], step_scale: f64) -> Vec<f64> {
        self.differences(indices, step_scale, true)
    }

    fn differences(&self, indices: &[usize], step_scale: f64, guard_kinks: bool) -> Vec<f64> {
        indices
            .iter()
            .map(|&i| {
                let x = self.state[i];
                let h = self.layout.fd_step(i, x) * step_scale;
                let plus = self.value_with(i, x + h);
                let minus = self.value_with(i, x - h);
                let forward = (plus - self.value) / h;
                let backward = (self.value - minus) / h;
                // One-sided near the edge of the admissible region.
                match (plus.is_finite(), minus.is_finite()) {
                    (true, true)
                        if guard_kinks
                            && forward.abs().max(backward.abs())
                                > KINK_RATIO * forward.abs().min(backward.abs()) =>
                    {
                        if forward.abs() < backward.abs() {
                            forward
                        } else {
                            backward
                        }
                    }
                    (true, true) => (plus - minus) / (2.0 * h),
                    (true, false) => forward,
                    (false, true) => backward,
                    (false, false) => 0.0,
                }
            })
            .collect()
    }
}
