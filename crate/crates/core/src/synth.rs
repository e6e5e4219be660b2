//! Seeded random ground-truth models.
//!
//! Every preset starts from the same canonical frame (model origin centred
//! below the image, opening upward) and perturbs it. Parameters are rounded
//! to `f32` so that a synthetic model survives the binary codec unchanged.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{GridSpec, OrientationField};
use crate::qd::{qd_orientation, QdParams};
use crate::xqd::{evaluate_xqd_field, AnchorPoint, FieldExtent, XqdModel, MAX_ANCHORS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Arch,
    Loop,
    DoubleLoop,
}

impl FromStr for Preset {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "arch" => Ok(Preset::Arch),
            "loop" => Ok(Preset::Loop),
            "doubleloop" | "double-loop" | "double_loop" => Ok(Preset::DoubleLoop),
            _ => Err(SynthError::UnknownPreset(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("unknown preset {0:?}; expected arch, loop or doubleloop")]
    UnknownPreset(String),
    #[error("too many anchors: {0}")]
    TooManyAnchors(usize),
    #[error("grid is too large for the model header: {0}x{1} px")]
    GridTooLarge(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub preset: Preset,
    pub anchors: usize,
    pub seed: u64,
    pub grid: GridSpec,
}

/// A ground-truth model and its field sampled on the full grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub model: XqdModel,
    pub field: OrientationField,
}

fn q(v: f64) -> f64 {
    f64::from(v as f32)
}

fn uniform(rng: &mut ChaCha8Rng, centre: f64, half_width: f64) -> f64 {
    centre + rng.gen_range(-half_width..=half_width)
}

pub fn synthesize(cfg: &SynthConfig) -> Result<Synthetic, SynthError> {
    if cfg.anchors > MAX_ANCHORS {
        return Err(SynthError::TooManyAnchors(cfg.anchors));
    }
    let (w, h) = cfg.grid.image_size_px();
    if w > usize::from(u16::MAX)
        || h > usize::from(u16::MAX)
        || cfg.grid.spacing_px > u32::from(u8::MAX)
    {
        return Err(SynthError::GridTooLarge(w, h));
    }
    let (w, h) = (w as f64, h as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let r = q(0.35 * w * rng.gen_range(0.75..=1.25));
    let lambda = q(rng.gen_range(0.8..=1.2));
    let rotation = q(uniform(&mut rng, PI, 0.15));
    let translation = (
        q(uniform(&mut rng, 0.5 * w, 0.04 * w)),
        q(uniform(&mut rng, 1.2 * h, 0.04 * h)),
    );
    let mut qd = QdParams::arch(r, lambda, rotation, translation);

    let jitter = |rng: &mut ChaCha8Rng, x: f64, y: f64| {
        (uniform(rng, x * w, 0.04 * w), uniform(rng, y * h, 0.04 * h))
    };
    let (cores, deltas) = match cfg.preset {
        Preset::Arch => (vec![], vec![]),
        Preset::Loop => {
            let core = jitter(&mut rng, 0.5, 0.4);
            let delta = jitter(&mut rng, 0.3, 0.68);
            (vec![core], vec![delta])
        }
        Preset::DoubleLoop => {
            let c1 = jitter(&mut rng, 0.44, 0.38);
            let c2 = jitter(&mut rng, 0.56, 0.52);
            let d1 = jitter(&mut rng, 0.22, 0.7);
            let d2 = jitter(&mut rng, 0.78, 0.7);
            (vec![c1, c2], vec![d1, d2])
        }
    };
    qd.set_singular_world(&cores, &deltas);
    for z in qd.cores.iter_mut().chain(qd.deltas.iter_mut()) {
        z.re = q(z.re);
        z.im = q(z.im);
    }

    let anchors = (0..cfg.anchors)
        .map(|_| {
            let a = q(rng.gen_range(0.1 * w..=0.9 * w));
            let b = q(rng.gen_range(0.1 * h..=0.9 * h));
            let offset = rng.gen_range(-25.0f64..=25.0).to_radians();
            let theta =
                q(AnchorPoint::new(a, b, qd_orientation(a, b, &qd) + offset, 1.0, 1.0).theta);
            let s1 = q(rng.gen_range(30.0..=70.0));
            let s2 = q(rng.gen_range(30.0..=70.0));
            AnchorPoint {
                a,
                b,
                theta,
                sigma1: s1,
                sigma2: s2,
            }
        })
        .collect();

    let model = XqdModel {
        qd,
        anchors,
        weight: Default::default(),
        extent: FieldExtent::from_grid(&cfg.grid),
    };
    let mask = vec![true; cfg.grid.len()];
    let field = evaluate_xqd_field(&model, &cfg.grid, &mask);
    Ok(Synthetic { model, field })
}
