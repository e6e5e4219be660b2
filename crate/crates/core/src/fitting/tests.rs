use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use proptest::prelude::*;

use super::*;
use crate::angle::wrap_unchecked;
use crate::field::GridSpec;
use crate::qd::qd_orientation;

fn grid_marks(model: &XqdModel, cols: usize, rows: usize, spacing: u32) -> Vec<Mark> {
    let grid = GridSpec::new(cols, rows, spacing).unwrap();
    (0..grid.len())
        .map(|i| {
            let (x, y) = grid.point_at(i);
            Mark::new(x, y, xqd_orientation(x, y, model)).unwrap()
        })
        .collect()
}

fn arch(r: f64, lambda: f64) -> QdParams {
    QdParams::arch(r, lambda, PI, (120.0, 300.0))
}

fn loop_qd() -> QdParams {
    let mut qd = QdParams::arch(110.0, 1.05, PI + 0.05, (150.0, 330.0));
    qd.set_singular_world(&[(150.0, 130.0)], &[(95.0, 215.0)]);
    qd
}

#[test]
fn objective_of_exact_model_is_zero() {
    let m = XqdModel::new(loop_qd());
    let marks = grid_marks(&m, 20, 20, 12);
    assert!(objective(&m, &marks).unwrap() < 1e-18);
}

#[test]
fn objective_single_mark_values() {
    let m = XqdModel::new(arch(80.0, 1.0));
    let a = qd_orientation(50.0, 60.0, &m.qd);
    let at = |delta: f64| {
        objective(
            &m,
            &[Mark {
                x: 50.0,
                y: 60.0,
                theta: a - delta,
            }],
        )
        .unwrap()
    };
    assert!((at(FRAC_PI_2) - 4.0).abs() < 1e-12);
    assert!((at(FRAC_PI_4) - 2.0).abs() < 1e-12);
    assert!(at(PI).abs() < 1e-12);
}

#[test]
fn objective_rejects_empty_marks() {
    let m = XqdModel::new(arch(80.0, 1.0));
    assert_eq!(objective(&m, &[]), Err(FitError::EmptyMarks));
    assert_eq!(
        fit_xqd(&[], &SingularPoints::default(), &FitStrategy::s1()).unwrap_err(),
        FitError::EmptyMarks
    );
}

#[test]
fn fit_qd_from_truth_does_not_move() {
    let truth = arch(80.0, 1.2);
    let marks = grid_marks(&XqdModel::new(truth.clone()), 20, 20, 12);
    let out = fit_qd(
        &marks,
        &SingularPoints::default(),
        Some(truth.clone()),
        &OptimizeCaps::default(),
    )
    .unwrap();
    assert_eq!(out.model.qd, truth);
    assert!(out.objective < 1e-18);
    assert_eq!(out.iterations, 0);
}

#[test]
fn fit_qd_recovers_perturbed_arch() {
    let truth = arch(80.0, 1.2);
    let marks = grid_marks(&XqdModel::new(truth.clone()), 20, 20, 12);
    let init = QdParams::arch(88.0, 1.08, PI + 0.1, (128.0, 312.0));
    let out = fit_qd(
        &marks,
        &SingularPoints::default(),
        Some(init),
        &OptimizeCaps::default(),
    )
    .unwrap();
    assert!(out.objective < 1e-4, "objective {}", out.objective);
    assert!(
        (out.model.qd.r / 80.0 - 1.0).abs() < 0.02,
        "R {}",
        out.model.qd.r
    );
    assert!(
        (out.model.qd.lambda / 1.2 - 1.0).abs() < 0.02,
        "lambda {}",
        out.model.qd.lambda
    );
}

#[test]
fn fit_qd_constant_lower_half_returns_init() {
    // Every mark lies below the model's real axis, where the field is flat.
    let init = QdParams::arch(80.0, 1.0, 0.0, (0.0, 0.0));
    let marks: Vec<Mark> = (0..30)
        .map(|i| {
            Mark::new(
                f64::from(i) * 5.0 - 70.0,
                -10.0 - f64::from(i % 5) * 7.0,
                0.0,
            )
            .unwrap()
        })
        .collect();
    let out = fit_qd(
        &marks,
        &SingularPoints::default(),
        Some(init.clone()),
        &OptimizeCaps::default(),
    )
    .unwrap();
    assert_eq!(out.model.qd, init);
    assert_eq!(out.objective, 0.0);
}

#[test]
fn fit_qd_keeps_singular_points_in_place() {
    let truth = loop_qd();
    let sp = SingularPoints::of(&truth);
    let marks = grid_marks(&XqdModel::new(truth.clone()), 25, 25, 12);
    let out = fit_qd(&marks, &sp, None, &OptimizeCaps::default()).unwrap();
    for (a, b) in out.model.qd.cores_world().iter().zip(&sp.cores) {
        assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
    }
    for (a, b) in out.model.qd.deltas_world().iter().zip(&sp.deltas) {
        assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
    }
}

#[test]
fn insert_anchor_noop_when_exact() {
    let m = XqdModel::new(loop_qd());
    let marks = grid_marks(&m, 10, 10, 12);
    let out = insert_anchor(&m, &marks, 36.0, &OptimizeCaps::default()).unwrap();
    assert_eq!(out, m);
}

#[test]
fn insert_anchor_fixes_discordant_mark() {
    let m = XqdModel::new(arch(90.0, 1.0));
    let mut marks = grid_marks(&m, 15, 15, 12);
    let k = 7 * 15 + 7;
    marks[k].theta = wrap_unchecked(marks[k].theta + 0.6);
    let out = insert_anchor(&m, &marks, 36.0, &OptimizeCaps::default()).unwrap();
    assert_eq!(out.anchors.len(), 1);
    // Placed on the discordant mark before optimization moves it.
    let (_, placed) = place_anchor(&m, &marks, 36.0, &[]).unwrap();
    assert_eq!(
        (placed.anchors[0].a, placed.anchors[0].b),
        (marks[k].x, marks[k].y)
    );
    let got = xqd_orientation(marks[k].x, marks[k].y, &out);
    assert!(
        deviation_unchecked(got, marks[k].theta) < 0.5,
        "{}",
        deviation_unchecked(got, marks[k].theta)
    );
}

#[test]
fn insert_anchor_tie_breaks_in_scan_order() {
    let m = XqdModel::new(arch(90.0, 1.0));
    let mut marks = grid_marks(&m, 10, 10, 12);
    for k in [23, 61] {
        marks[k].theta = wrap_unchecked(marks[k].theta + 0.4);
    }
    let (_, placed) = place_anchor(&m, &marks, 36.0, &[]).unwrap();
    assert_eq!(
        (placed.anchors[0].a, placed.anchors[0].b),
        (marks[23].x, marks[23].y)
    );
}

#[test]
fn optimize_zero_gradient_returns_input() {
    let m = XqdModel::new(loop_qd());
    let marks = grid_marks(&m, 10, 10, 12);
    let out = optimize(
        &m,
        &marks,
        &ParamSelection::everything(),
        &OptimizeCaps::default(),
    )
    .unwrap();
    assert_eq!(out.model, m);
    assert_eq!(out.iterations, 0);
}

#[test]
fn optimize_recovers_spreads() {
    let mut truth = XqdModel::new(arch(100.0, 1.0));
    let qd = truth.qd.clone();
    let a = (114.0, 126.0);
    let theta = qd_orientation(a.0, a.1, &qd) + 0.5;
    truth
        .anchors
        .push(AnchorPoint::new(a.0, a.1, theta, 50.0, 28.0));
    let marks = grid_marks(&truth, 20, 20, 12);
    let mut start = truth.clone();
    start.anchors[0].sigma1 = 36.0;
    start.anchors[0].sigma2 = 36.0;
    let which = ParamSelection {
        anchor_fields: AnchorFields::SPREAD,
        ..ParamSelection::all_anchors()
    };
    let out = optimize(&start, &marks, &which, &OptimizeCaps::default()).unwrap();
    let p = out.model.anchors[0];
    assert!((p.sigma1 / 50.0 - 1.0).abs() < 0.1, "sigma1 {}", p.sigma1);
    assert!((p.sigma2 / 28.0 - 1.0).abs() < 0.1, "sigma2 {}", p.sigma2);
    assert_eq!(
        (p.a, p.b, p.theta),
        (
            start.anchors[0].a,
            start.anchors[0].b,
            start.anchors[0].theta
        )
    );
}

#[test]
fn gradient_matches_full_recomputation() {
    let mut m = XqdModel::new(loop_qd());
    m.anchors
        .push(AnchorPoint::new(120.0, 150.0, 0.3, 40.0, 25.0));
    m.anchors
        .push(AnchorPoint::new(180.0, 200.0, -1.2, 30.0, 45.0));
    let mut marks = grid_marks(&XqdModel::new(loop_qd()), 20, 20, 12);
    for (i, mk) in marks.iter_mut().enumerate() {
        mk.theta = wrap_unchecked(mk.theta + 0.2 * ((i as f64) * 0.37).sin());
    }
    let g = objective_gradient(&m, &marks, 1.0).unwrap();
    let x = parameters(&m);
    let steps = finite_difference_steps(&m);
    for i in 0..x.len() {
        let f = |v: f64| {
            let mut y = x.clone();
            y[i] = v;
            objective(&with_parameters(&m, &y).unwrap(), &marks).unwrap()
        };
        let want = (f(x[i] + steps[i]) - f(x[i] - steps[i])) / (2.0 * steps[i]);
        let tol = 1e-6 * want.abs().max(1e-3);
        assert!(
            (g[i] - want).abs() <= tol,
            "param {i}: {} vs {}",
            g[i],
            want
        );
    }
}

#[test]
fn pure_qd_needs_no_anchors() {
    let truth = XqdModel::new(loop_qd());
    let marks = grid_marks(&truth, 25, 25, 12);
    for s in [FitStrategy::s1(), FitStrategy::s4()] {
        let (model, report) = fit_xqd(&marks, &SingularPoints::of(&truth.qd), &s).unwrap();
        assert_eq!(report.anchors_used, 0, "{:?}", report);
        assert!(report.deviation_deg < 0.1, "{:?}", report);
        assert!(model.anchors.is_empty());
    }
}

#[test]
fn strategies_respect_anchor_caps() {
    let mut truth = XqdModel::new(arch(100.0, 1.0));
    for (k, (a, b)) in [(60.0, 60.0), (150.0, 90.0), (90.0, 170.0), (200.0, 200.0)]
        .into_iter()
        .enumerate()
    {
        let th = qd_orientation(a, b, &truth.qd) + 0.3 * if k % 2 == 0 { 1.0 } else { -1.0 };
        truth.anchors.push(AnchorPoint::new(a, b, th, 30.0, 40.0));
    }
    let marks = grid_marks(&truth, 20, 20, 12);
    let mut prev = f64::INFINITY;
    for s in [FitStrategy::s1(), FitStrategy::s2()] {
        let (_, report) = fit_xqd(&marks, &SingularPoints::default(), &s).unwrap();
        assert!(report.anchors_used <= s.max_anchors);
        assert!(report.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(report.final_objective <= prev + 1e-9 || s.name == StrategyName::S1);
        prev = report.final_objective;
    }
}

#[test]
fn fit_is_deterministic() {
    let mut truth = XqdModel::new(arch(100.0, 1.0));
    let th = qd_orientation(120.0, 120.0, &truth.qd) + 0.4;
    truth
        .anchors
        .push(AnchorPoint::new(120.0, 120.0, th, 30.0, 30.0));
    let marks = grid_marks(&truth, 15, 15, 12);
    let run = || fit_xqd(&marks, &SingularPoints::default(), &FitStrategy::s2()).unwrap();
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(m1, m2);
    assert_eq!(r1.objective_trace, r2.objective_trace);
    assert_eq!(r1.deviation_deg, r2.deviation_deg);
}

#[test]
fn zero_budget_reports_exhaustion() {
    let mut truth = XqdModel::new(arch(100.0, 1.0));
    let th = qd_orientation(120.0, 120.0, &truth.qd) + 0.4;
    truth
        .anchors
        .push(AnchorPoint::new(120.0, 120.0, th, 30.0, 30.0));
    let marks = grid_marks(&truth, 15, 15, 12);
    let (_, report) = fit_xqd(
        &marks,
        &SingularPoints::default(),
        &FitStrategy::s4().with_budget(0.0),
    )
    .unwrap();
    assert!(report.budget_exhausted);
    assert_eq!(report.anchors_used, 0);
}

#[test]
fn default_init_places_marks_in_upper_half() {
    let truth = loop_qd();
    let marks = grid_marks(&XqdModel::new(truth.clone()), 20, 20, 12);
    let sp = SingularPoints::of(&truth);
    let init = default_init(&marks, &sp).unwrap();
    assert!(init.validate().is_ok());
    assert!(marks.iter().all(|m| init.to_model(m.x, m.y).im > 0.0));
    assert_eq!(init.cores.len(), 1);
    assert_eq!(init.deltas.len(), 1);
    assert!(init.cores[0].im > 0.0 && init.deltas[0].im > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_identity(
        r in 40.0f64..200.0, lambda in 0.6f64..1.6, rot in -PI..PI,
        tx in 0.0f64..200.0, ty in 0.0f64..200.0,
        a in 0.0f64..240.0, b in 0.0f64..240.0, th in -2.0f64..2.0, s1 in 10.0f64..80.0, s2 in 10.0f64..80.0,
        pts in prop::collection::vec((0.0f64..240.0, 0.0f64..240.0, -1.5f64..1.5), 1..40),
    ) {
        let mut m = XqdModel::new(QdParams::arch(r, lambda, rot, (tx, ty)));
        m.anchors.push(AnchorPoint::new(a, b, th, s1, s2));
        let marks: Vec<Mark> = pts.iter().map(|&(x, y, t)| Mark::new(x, y, t).unwrap()).collect();
        let want: f64 = marks.iter().map(|mk| {
            let s = (xqd_orientation(mk.x, mk.y, &m) - mk.theta).sin();
            4.0 * s * s
        }).sum();
        prop_assert!((objective(&m, &marks).unwrap() - want).abs() <= 1e-9);
        let flipped: Vec<Mark> = marks.iter().map(|mk| Mark { theta: mk.theta + PI, ..*mk }).collect();
        prop_assert!((objective(&m, &flipped).unwrap() - want).abs() <= 1e-9);
    }
}
