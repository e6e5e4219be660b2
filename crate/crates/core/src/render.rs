//! Static SVG renderings of orientation fields.

use std::fmt::Write as _;

use thiserror::Error;

use crate::field::OrientationField;

/// Segment length relative to the grid spacing.
pub const SEGMENT_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("stride must be at least 1")]
    ZeroStride,
}

/// One line segment per sampled foreground cell, centred on the cell and
/// pointing along its orientation. Cells are sampled where both the column
/// and the row are multiples of `stride`. Cores are drawn as circles and
/// deltas as triangles.
pub fn render_svg(
    field: &OrientationField,
    cores: &[(f64, f64)],
    deltas: &[(f64, f64)],
    stride: usize,
) -> Result<String, RenderError> {
    if stride == 0 {
        return Err(RenderError::ZeroStride);
    }
    let g = field.grid();
    let (w, h) = g.image_size_px();
    let half = 0.5 * SEGMENT_FRACTION * g.spacing();
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r##"<rect width="{w}" height="{h}" fill="#ffffff"/>"##);
    let _ = writeln!(
        out,
        r##"<g stroke="#1f3a93" stroke-width="1.2" stroke-linecap="round">"##
    );
    for row in (0..g.rows).step_by(stride) {
        for col in (0..g.cols).step_by(stride) {
            let Some(theta) = field.angle(g.index(col, row)) else {
                continue;
            };
            let (x, y) = g.point(col, row);
            let (dx, dy) = (half * theta.cos(), half * theta.sin());
            let _ = writeln!(
                out,
                r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}"/>"#,
                x - dx,
                y - dy,
                x + dx,
                y + dy
            );
        }
    }
    out.push_str("</g>\n");
    let size = g.spacing().max(6.0);
    for &(x, y) in cores {
        let _ = writeln!(
            out,
            r##"<circle class="core" cx="{x:.3}" cy="{y:.3}" r="{:.3}" fill="none" stroke="#c0392b" stroke-width="2"/>"##,
            0.5 * size
        );
    }
    for &(x, y) in deltas {
        let s = 0.6 * size;
        let _ = writeln!(
            out,
            r##"<polygon class="delta" points="{:.3},{:.3} {:.3},{:.3} {:.3},{:.3}" fill="none" stroke="#27ae60" stroke-width="2"/>"##,
            x,
            y - s,
            x - s * 0.866,
            y + s * 0.5,
            x + s * 0.866,
            y + s * 0.5
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
