//! Plain-text matrix files: a dimensions header per matrix, then row-major
//! values. Used to export linear models and to pin frozen controller gains.
//!
//! ```text
//! # optional comments
//! matrix A 2 3
//! 1 2 3
//! 4 5 6
//! matrix B 1 1
//! 42
//! ```
//!
//! Values are written in f64 round-trip form, so export/import is exact.

use nalgebra::DMatrix;
use std::fmt::Write as _;
use thiserror::Error;

/// Upper bound on rows*cols, so malformed headers cannot ask for huge buffers.
const MAX_ELEMENTS: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum MatError {
    #[error("matrix file parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("matrix `{0}` missing from file")]
    Missing(String),
    #[error("matrix `{name}` has shape {rows}x{cols}, expected {want_rows}x{want_cols}")]
    Shape {
        name: String,
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Render named matrices in file order.
pub fn write_matrices(items: &[(&str, &DMatrix<f64>)]) -> String {
    let mut out = String::from("# helictl matrix file\n");
    for (name, m) in items {
        let _ = writeln!(out, "matrix {} {} {}", name, m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}

/// Parse a matrix file into (name, matrix) pairs in file order.
pub fn parse_matrices(text: &str) -> Result<Vec<(String, DMatrix<f64>)>, MatError> {
    let mut out: Vec<(String, DMatrix<f64>)> = Vec::new();
    let mut pending: Option<(String, usize, usize, Vec<f64>)> = None;

    let finish = |pending: &mut Option<(String, usize, usize, Vec<f64>)>,
                  out: &mut Vec<(String, DMatrix<f64>)>,
                  line: usize|
     -> Result<(), MatError> {
        if let Some((name, rows, cols, vals)) = pending.take() {
            if vals.len() != rows * cols {
                return Err(MatError::Parse {
                    line,
                    msg: format!(
                        "matrix `{name}` declared {rows}x{cols} but carries {} values",
                        vals.len()
                    ),
                });
            }
            out.push((name, DMatrix::from_row_slice(rows, cols, &vals)));
        }
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let first = tokens.next().unwrap();
        if first == "matrix" {
            finish(&mut pending, &mut out, line_no)?;
            let name = tokens
                .next()
                .ok_or(MatError::Parse {
                    line: line_no,
                    msg: "matrix header needs a name".into(),
                })?
                .to_string();
            let rows: usize = tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or(MatError::Parse {
                    line: line_no,
                    msg: "matrix header needs integer row count".into(),
                })?;
            let cols: usize = tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or(MatError::Parse {
                    line: line_no,
                    msg: "matrix header needs integer column count".into(),
                })?;
            if tokens.next().is_some() {
                return Err(MatError::Parse {
                    line: line_no,
                    msg: "trailing tokens after matrix header".into(),
                });
            }
            if rows == 0 || cols == 0 || rows.saturating_mul(cols) > MAX_ELEMENTS {
                return Err(MatError::Parse {
                    line: line_no,
                    msg: format!("unreasonable matrix shape {rows}x{cols}"),
                });
            }
            if out.iter().any(|(n, _)| *n == name) {
                return Err(MatError::Parse {
                    line: line_no,
                    msg: format!("duplicate matrix name `{name}`"),
                });
            }
            pending = Some((name, rows, cols, Vec::with_capacity(rows * cols)));
        } else {
            let Some((name, rows, cols, vals)) = pending.as_mut() else {
                return Err(MatError::Parse {
                    line: line_no,
                    msg: "values before any matrix header".into(),
                });
            };
            for tok in std::iter::once(first).chain(tokens) {
                let v: f64 = tok.parse().map_err(|_| MatError::Parse {
                    line: line_no,
                    msg: format!("`{tok}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(MatError::Parse {
                        line: line_no,
                        msg: format!("non-finite value in matrix `{name}`"),
                    });
                }
                if vals.len() >= *rows * *cols {
                    return Err(MatError::Parse {
                        line: line_no,
                        msg: format!("too many values for matrix `{name}`"),
                    });
                }
                vals.push(v);
            }
        }
    }
    let last_line = text.lines().count();
    finish(&mut pending, &mut out, last_line)?;
    Ok(out)
}

/// Look up one matrix by name.
pub fn find<'a>(
    items: &'a [(String, DMatrix<f64>)],
    name: &str,
) -> Result<&'a DMatrix<f64>, MatError> {
    items
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, m)| m)
        .ok_or_else(|| MatError::Missing(name.to_string()))
}

/// Look up one matrix and insist on its shape.
pub fn find_shaped<'a>(
    items: &'a [(String, DMatrix<f64>)],
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<&'a DMatrix<f64>, MatError> {
    let m = find(items, name)?;
    if m.nrows() != rows || m.ncols() != cols {
        return Err(MatError::Shape {
            name: name.to_string(),
            rows: m.nrows(),
            cols: m.ncols(),
            want_rows: rows,
            want_cols: cols,
        });
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_rejects_malformed_input() {
        assert!(parse_matrices("matrix A 2 2\n1 2 3\n").is_err()); // short
        assert!(parse_matrices("matrix A 2 2\n1 2 3 4 5\n").is_err()); // long
        assert!(parse_matrices("1 2 3\n").is_err()); // values first
        assert!(parse_matrices("matrix A two 2\n").is_err());
        assert!(parse_matrices("matrix A 99999999 99999999\n").is_err());
        assert!(parse_matrices("matrix A 1 1\nnan\n").is_err());
        assert!(parse_matrices("matrix A 1 1\n1\nmatrix A 1 1\n2\n").is_err()); // dup
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# head\nmatrix M 2 2 # shape\n\n1 2 # row\n3 4\n";
        let items = parse_matrices(text).unwrap();
        let m = find_shaped(&items, "M", 2, 2).unwrap();
        assert_eq!(m[(1, 0)], 3.0);
    }

    proptest! {
        /// Round-trip is exact for any finite matrix content.
        #[test]
        fn round_trip_exact(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::<f64>::from_fn(rows, cols, |_, _| {
                let mantissa: f64 = rng.gen_range(-1.0..1.0);
                let exp: i32 = rng.gen_range(-300..300);
                mantissa * 10f64.powi(exp)
            });
            let text = write_matrices(&[("X", &m)]);
            let back = parse_matrices(&text).unwrap();
            let x = find(&back, "X").unwrap();
            prop_assert_eq!(&m, x);
        }
    }
}
