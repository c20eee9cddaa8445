//! MatrixMarket reader for dense or coordinate real matrices.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

fn line_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::invalid(format!("MatrixMarket line {line}: {msg}"))
}

/// Parses `%%MatrixMarket matrix {coordinate|array} real {general|symmetric}`.
pub fn parse_matrix_market(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, header) = lines.next().ok_or_else(|| Error::invalid("MatrixMarket input is empty"))?;
    let fields: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(line_err(1, "expected '%%MatrixMarket matrix <format> <field> <symmetry>' header"));
    }
    let coordinate = match fields[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => return Err(line_err(1, format!("unsupported format '{other}'"))),
    };
    if fields[3] != "real" && fields[3] != "integer" {
        return Err(line_err(1, format!("unsupported field '{}'", fields[3])));
    }
    let symmetric = match fields[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(line_err(1, format!("unsupported symmetry '{other}'"))),
    };
    let mut body = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    let (size_line, size) = body.next().ok_or_else(|| Error::invalid("MatrixMarket size line missing"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| line_err(size_line, format!("bad integer '{t}'"))))
        .collect::<Result<_>>()?;
    let expected = if coordinate { 3 } else { 2 };
    if dims.len() != expected {
        return Err(line_err(size_line, format!("expected {expected} size fields")));
    }
    let (rows, cols) = (dims[0], dims[1]);
    if rows == 0 || cols == 0 {
        return Err(line_err(size_line, "matrix has a zero dimension"));
    }
    let mut a = DMatrix::zeros(rows, cols);
    let value = |line: usize, t: &str| t.parse::<f64>().map_err(|_| line_err(line, format!("bad number '{t}'")));
    if coordinate {
        let mut count = 0;
        for (line, text) in body {
            let t: Vec<&str> = text.split_whitespace().collect();
            if t.len() != 3 {
                return Err(line_err(line, "expected 'row col value'"));
            }
            let i: usize = t[0].parse().map_err(|_| line_err(line, "bad row index"))?;
            let j: usize = t[1].parse().map_err(|_| line_err(line, "bad column index"))?;
            if i == 0 || j == 0 || i > rows || j > cols {
                return Err(line_err(line, format!("index ({i},{j}) out of range")));
            }
            let v = value(line, t[2])?;
            a[(i - 1, j - 1)] += v;
            if symmetric && i != j {
                a[(j - 1, i - 1)] += v;
            }
            count += 1;
        }
        if count != dims[2] {
            return Err(Error::invalid(format!("MatrixMarket: expected {} entries, found {count}", dims[2])));
        }
    } else {
        // column-major; symmetric arrays list the lower triangle only
        let positions: Vec<(usize, usize)> = if symmetric {
            (0..cols).flat_map(|j| (j..rows).map(move |i| (i, j))).collect()
        } else {
            (0..cols).flat_map(|j| (0..rows).map(move |i| (i, j))).collect()
        };
        let mut it = positions.into_iter();
        for (line, text) in body {
            let (i, j) = it.next().ok_or_else(|| line_err(line, "too many entries"))?;
            let v = value(line, text)?;
            a[(i, j)] = v;
            if symmetric {
                a[(j, i)] = v;
            }
        }
        if it.next().is_some() {
            return Err(Error::invalid("MatrixMarket: too few array entries"));
        }
    }
    Ok(a)
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    parse_matrix_market(&text)
}
