//! Flat parameter vectors for the optimizer.
//!
//! The full state of a model is laid out as
//! `[R, λ, rotation, t_x, t_y, singular world positions…, anchors…]`, each
//! anchor contributing `(a, b, θ, σ1, σ2)`. Singular points are carried in
//! world coordinates so that they stay put while the frame moves.

use crate::qd::QdParams;
use crate::xqd::{AnchorPoint, FieldExtent, WeightKind, XqdModel};

pub(crate) const FRAME_LEN: usize = 5;
pub(crate) const ANCHOR_LEN: usize = 5;

pub(crate) const R: usize = 0;
pub(crate) const LAMBDA: usize = 1;
pub(crate) const ROTATION: usize = 2;

pub(crate) const ANCHOR_THETA: usize = 2;

/// Which anchors an optimization pass may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorSet {
    None,
    /// Only the most recently appended anchor.
    Last,
    All,
}

/// Which fields of each selected anchor may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnchorFields {
    pub position: bool,
    pub angle: bool,
    pub spread: bool,
}

impl AnchorFields {
    pub const ALL: AnchorFields = AnchorFields {
        position: true,
        angle: true,
        spread: true,
    };
    pub const SPREAD: AnchorFields = AnchorFields {
        position: false,
        angle: false,
        spread: true,
    };
}

/// Subset of model parameters exposed to the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSelection {
    /// R, λ, rotation and translation.
    pub frame: bool,
    /// World positions of cores and deltas.
    pub singular_points: bool,
    pub anchors: AnchorSet,
    pub anchor_fields: AnchorFields,
}

impl ParamSelection {
    pub fn frame_only() -> Self {
        ParamSelection {
            frame: true,
            singular_points: false,
            anchors: AnchorSet::None,
            anchor_fields: AnchorFields::ALL,
        }
    }

    pub fn last_anchor() -> Self {
        ParamSelection {
            frame: false,
            singular_points: false,
            anchors: AnchorSet::Last,
            anchor_fields: AnchorFields::ALL,
        }
    }

    pub fn all_anchors() -> Self {
        ParamSelection {
            anchors: AnchorSet::All,
            ..Self::last_anchor()
        }
    }

    pub fn everything() -> Self {
        ParamSelection {
            frame: true,
            singular_points: true,
            anchors: AnchorSet::All,
            anchor_fields: AnchorFields::ALL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub n_cores: usize,
    pub n_deltas: usize,
    pub n_anchors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    Frame(usize),
    Singular,
    Anchor { index: usize, field: usize },
}

impl Layout {
    pub fn of(model: &XqdModel) -> Self {
        Layout {
            n_cores: model.qd.cores.len(),
            n_deltas: model.qd.deltas.len(),
            n_anchors: model.anchors.len(),
        }
    }

    pub fn singular_len(&self) -> usize {
        2 * (self.n_cores + self.n_deltas)
    }

    pub fn anchor_start(&self) -> usize {
        FRAME_LEN + self.singular_len()
    }

    pub fn len(&self) -> usize {
        self.anchor_start() + ANCHOR_LEN * self.n_anchors
    }

    pub fn slot(&self, i: usize) -> Slot {
        if i < FRAME_LEN {
            Slot::Frame(i)
        } else if i < self.anchor_start() {
            Slot::Singular
        } else {
            let k = i - self.anchor_start();
            Slot::Anchor {
                index: k / ANCHOR_LEN,
                field: k % ANCHOR_LEN,
            }
        }
    }

    /// State indices selected for optimization, in layout order.
    pub fn indices(&self, which: &ParamSelection) -> Vec<usize> {
        let mut out = Vec::new();
        if which.frame {
            out.extend(0..FRAME_LEN);
        }
        if which.singular_points {
            out.extend(FRAME_LEN..self.anchor_start());
        }
        let anchors = match which.anchors {
            AnchorSet::None => 0..0,
            AnchorSet::Last => self.n_anchors.saturating_sub(1)..self.n_anchors,
            AnchorSet::All => 0..self.n_anchors,
        };
        let f = which.anchor_fields;
        for k in anchors {
            let base = self.anchor_start() + ANCHOR_LEN * k;
            if f.position {
                out.extend([base, base + 1]);
            }
            if f.angle {
                out.push(base + 2);
            }
            if f.spread {
                out.extend([base + 3, base + 4]);
            }
        }
        out
    }

    /// Central-difference step for state entry `i` at value `v`.
    pub fn fd_step(&self, i: usize, v: f64) -> f64 {
        match self.slot(i) {
            Slot::Frame(R) | Slot::Frame(LAMBDA) => 1e-3 * v.abs().max(1e-6),
            Slot::Frame(ROTATION) => 1e-3,
            Slot::Frame(_) | Slot::Singular => 0.5,
            Slot::Anchor { field, .. } => match field {
                ANCHOR_THETA => 1e-3,
                _ => 0.5,
            },
        }
    }

    /// Natural scale used to precondition the descent direction.
    pub fn scale(&self, i: usize, v: f64) -> f64 {
        match self.slot(i) {
            Slot::Frame(R) => 0.1 * v.abs().max(1e-6),
            Slot::Frame(LAMBDA) | Slot::Frame(ROTATION) => 0.1,
            Slot::Frame(_) | Slot::Singular => 10.0,
            Slot::Anchor { field, .. } => match field {
                ANCHOR_THETA => 0.2,
                _ => 10.0,
            },
        }
    }
}

pub(crate) fn pack(model: &XqdModel) -> Vec<f64> {
    let qd = &model.qd;
    let mut state = vec![
        qd.r,
        qd.lambda,
        qd.rotation,
        qd.translation.0,
        qd.translation.1,
    ];
    for (x, y) in qd.cores_world().into_iter().chain(qd.deltas_world()) {
        state.extend([x, y]);
    }
    for p in &model.anchors {
        state.extend([p.a, p.b, p.theta, p.sigma1, p.sigma2]);
    }
    state
}

/// Global model for a state vector. Singular points are re-projected into
/// the model frame described by the state.
pub(crate) fn unpack_qd(state: &[f64], layout: &Layout) -> QdParams {
    let mut qd = QdParams::arch(state[0], state[1], state[2], (state[3], state[4]));
    let world: Vec<(f64, f64)> = state[FRAME_LEN..layout.anchor_start()]
        .chunks_exact(2)
        .map(|c| (c[0], c[1]))
        .collect();
    let (cores, deltas) = world.split_at(layout.n_cores);
    qd.set_singular_world(cores, deltas);
    qd
}

pub(crate) fn unpack_anchor(state: &[f64], layout: &Layout, k: usize) -> AnchorPoint {
    let s = &state[layout.anchor_start() + ANCHOR_LEN * k..][..ANCHOR_LEN];
    AnchorPoint {
        a: s[0],
        b: s[1],
        theta: s[2],
        sigma1: s[3],
        sigma2: s[4],
    }
}

pub(crate) fn unpack(
    state: &[f64],
    layout: &Layout,
    weight: WeightKind,
    extent: FieldExtent,
) -> XqdModel {
    XqdModel {
        qd: unpack_qd(state, layout),
        anchors: (0..layout.n_anchors)
            .map(|k| unpack_anchor(state, layout, k))
            .collect(),
        weight,
        extent,
    }
}

/// Whether the global part of a state describes a usable model.
pub(crate) fn qd_admissible(qd: &QdParams) -> bool {
    qd.r > 0.0
        && qd.lambda > 0.0
        && qd.r.is_finite()
        && qd.lambda.is_finite()
        && qd
            .cores
            .iter()
            .chain(&qd.deltas)
            .all(|s| s.im > 0.0 && s.re.is_finite())
}

pub(crate) fn anchor_admissible(p: &AnchorPoint) -> bool {
    p.sigma1 > 0.0
        && p.sigma2 > 0.0
        && p.sigma1.is_finite()
        && p.sigma2.is_finite()
        && p.a.is_finite()
        && p.b.is_finite()
}
