//! Fingerprint orientation fields as extended quadratic-differential (XQD)
//! models.
//!
//! A global quadratic-differential model captures the coarse ridge flow from
//! a handful of parameters and the positions of cores and deltas. Anchor
//! points add local corrections on top. This crate evaluates such models,
//! fits them to sparse or dense orientation data, encodes them into a compact
//! binary form, and runs the ratio-field refinement that adapts a model to a
//! field to arbitrary precision.
// Negated float comparisons are deliberate: NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod angle;
pub mod codec;
pub mod field;
pub mod fitting;
pub mod ingest;
pub mod qd;
pub mod refine;
pub mod render;
pub mod synth;
pub mod xqd;

pub use angle::{angular_deviation, wrap_half_pi};
pub use field::{field_deviation, FieldError, GridSpec, Mark, OrientationField};
pub use qd::{evaluate_qd_field, qd_orientation, qd_polynomial, QdParams};
pub use xqd::{
    anchor_weight, correction_multi, correction_single, evaluate_xqd_field, xqd_orientation,
    AnchorPoint, FieldExtent, WeightKind, XqdModel,
};
