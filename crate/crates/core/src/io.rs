//! Dense CSV matrices: one row per line, comma-separated decimals, no header.
//!
//! Blank lines and lines starting with `#` are skipped on input.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("line {line}, column {column}: cannot parse {text:?} as a number")]
    Parse { line: usize, column: usize, text: String },

    #[error("line {line} has {found} columns, expected {expected}")]
    Ragged { line: usize, expected: usize, found: usize },

    #[error("no data rows")]
    Empty,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads an `n x p` matrix. Line and column numbers in errors are 1-based.
pub fn read_matrix<R: BufRead>(reader: R) -> Result<DMatrix<f64>, CsvError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let row = trimmed
            .split(',')
            .enumerate()
            .map(|(c, field)| {
                let field = field.trim();
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CsvError::Parse {
                        line: k + 1,
                        column: c + 1,
                        text: field.to_string(),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(CsvError::Ragged {
                    line: k + 1,
                    expected: first.len(),
                    found: row.len(),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CsvError::Empty);
    }
    let (n, p) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>, CsvError> {
    let file = std::fs::File::open(path)?;
    read_matrix(std::io::BufReader::new(file))
}

/// 17 significant digits in scientific notation; round-trips every `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

pub fn write_matrix<W: Write>(mut w: W, m: &DMatrix<f64>) -> std::io::Result<()> {
    w.write_all(matrix_to_csv(m).as_bytes())
}

pub fn write_matrix_file(path: &Path, m: &DMatrix<f64>) -> std::io::Result<()> {
    std::fs::write(path, matrix_to_csv(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn round_trip_is_exact() {
        let m = dmatrix![1.0, -2.5e-300; std::f64::consts::PI, 1.0 / 3.0];
        let text = matrix_to_csv(&m);
        assert!(text.ends_with('\n') && !text.contains('\r'));
        let back = read_matrix(text.as_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn skips_comments_and_blanks() {
        let m = read_matrix("# header\n1,2\n\n 3 , 4 \n".as_bytes()).unwrap();
        assert_eq!(m, dmatrix![1.0, 2.0; 3.0, 4.0]);
    }

    #[test]
    fn reports_location_of_bad_fields() {
        match read_matrix("1,2\n3,x\n".as_bytes()) {
            Err(CsvError::Parse {
                line: 2,
                column: 2,
                text,
            }) => assert_eq!(text, "x"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_matrix("1,2\n3\n".as_bytes()),
            Err(CsvError::Ragged { line: 2, .. })
        ));
        assert!(matches!(read_matrix("1,nan\n".as_bytes()), Err(CsvError::Parse { .. })));
        assert!(matches!(read_matrix("".as_bytes()), Err(CsvError::Empty)));
    }
}
