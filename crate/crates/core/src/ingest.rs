//! Plain-text `.xof` orientation grids.
//!
//! ```text
//! XOF1 <cols> <rows> <spacing_px>
//! <cols tokens>      (one line per row, top row first)
//! ```
//!
//! Each token is an orientation in degrees in `[0, 180)` or `*` for a
//! background cell. Cell centres sit at `spacing/2 + index·spacing`.

use thiserror::Error;

use crate::angle;
use crate::field::{GridSpec, Mark, OrientationField};

pub const MAGIC: &str = "XOF1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("line 1: expected header \"XOF1 <cols> <rows> <spacing>\", found {0:?}")]
    Header(String),
    #[error("line {line}: expected {expected} tokens, found {found}")]
    TokenCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("expected {expected} rows, found {found}")]
    RowCount { expected: usize, found: usize },
    #[error("line {line}, column {column}: {token:?} is not a degree value in [0, 180) or \"*\"")]
    BadValue {
        line: usize,
        column: usize,
        token: String,
    },
}

fn parse_header(line: &str) -> Result<GridSpec, ParseError> {
    let bad = || ParseError::Header(line.to_string());
    let mut it = line.split_whitespace();
    if it.next() != Some(MAGIC) {
        return Err(bad());
    }
    let mut num = || {
        it.next()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(bad)
    };
    let (cols, rows, spacing) = (num()?, num()?, num()?);
    if it.next().is_some() {
        return Err(bad());
    }
    let spacing = u32::try_from(spacing).map_err(|_| bad())?;
    GridSpec::new(cols, rows, spacing).map_err(|_| bad())
}

/// Parses an `.xof` document. LF and CRLF line endings are accepted; blank
/// trailing lines are ignored.
pub fn read_of_grid(text: &str) -> Result<OrientationField, ParseError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| ParseError::Header(String::new()))?;
    let grid = parse_header(header.trim_end_matches('\r'))?;
    let mut angles = Vec::with_capacity(grid.len());
    let mut mask = Vec::with_capacity(grid.len());
    let mut rows = 0;
    for (i, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        if rows == grid.rows {
            return Err(ParseError::RowCount {
                expected: grid.rows,
                found: rows + 1,
            });
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != grid.cols {
            return Err(ParseError::TokenCount {
                line: lineno,
                expected: grid.cols,
                found: tokens.len(),
            });
        }
        for (col, tok) in tokens.into_iter().enumerate() {
            if tok == "*" {
                angles.push(crate::field::BACKGROUND);
                mask.push(false);
                continue;
            }
            let deg = tok
                .parse::<f64>()
                .ok()
                .filter(|d| d.is_finite() && (0.0..180.0).contains(d))
                .ok_or_else(|| ParseError::BadValue {
                    line: lineno,
                    column: col + 1,
                    token: tok.to_string(),
                })?;
            angles.push(angle::from_degrees(deg).expect("finite"));
            mask.push(true);
        }
        rows += 1;
    }
    if rows != grid.rows {
        return Err(ParseError::RowCount {
            expected: grid.rows,
            found: rows,
        });
    }
    Ok(OrientationField::new(grid, angles, mask).expect("sizes checked while parsing"))
}

/// Serializes a field with six decimals per angle.
pub fn write_of_grid(field: &OrientationField) -> String {
    let g = field.grid();
    let mut out = format!("{MAGIC} {} {} {}\n", g.cols, g.rows, g.spacing_px);
    for row in 0..g.rows {
        for col in 0..g.cols {
            if col > 0 {
                out.push(' ');
            }
            match field.angle(g.index(col, row)) {
                Some(a) => {
                    // Rounding can land on 180.000000, which reads back as out of range.
                    let s = format!("{:.6}", angle::to_degrees(a));
                    out.push_str(if s == "180.000000" { "0.000000" } else { &s });
                }
                None => out.push('*'),
            }
        }
        out.push('\n');
    }
    out
}

/// One mark per foreground cell, at the cell centre, in row-major order.
pub fn field_to_marks(field: &OrientationField) -> Vec<Mark> {
    field
        .foreground()
        .map(|(_, x, y, theta)| Mark { x, y, theta })
        .collect()
}
