//! MatrixMarket matrices and plain-text vectors.
//!
//! Writers emit the shortest decimal that parses back to the same `f64`, so a
//! write followed by a read is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::operator::DenseMatrix;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|e| parse_err(path, line, format!("invalid number {tok:?}: {e}")))
}

fn parse_usize(path: &Path, line: usize, tok: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|e| parse_err(path, line, format!("invalid integer {tok:?}: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Array,
    Coordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
}

/// Read a real MatrixMarket file in `array` or `coordinate` layout
/// (`general` or `symmetric`).
pub fn read_matrix_market(path: &Path) -> Result<DenseMatrix> {
    let text = fs::read_to_string(path)?;
    parse_matrix_market(&text, path)
}

pub fn parse_matrix_market(text: &str, path: &Path) -> Result<DenseMatrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let fields: Vec<String> = header
        .split_whitespace()
        .map(str::to_ascii_lowercase)
        .collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(parse_err(
            path,
            hline,
            "expected '%%MatrixMarket matrix <layout> real <symmetry>'",
        ));
    }
    let layout = match fields[2].as_str() {
        "array" => Layout::Array,
        "coordinate" => Layout::Coordinate,
        other => {
            return Err(parse_err(
                path,
                hline,
                format!("unsupported layout {other:?}"),
            ))
        }
    };
    if fields[3] != "real" && fields[3] != "double" && fields[3] != "integer" {
        return Err(parse_err(
            path,
            hline,
            format!("unsupported field {:?}", fields[3]),
        ));
    }
    let symmetry = match fields[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => {
            return Err(parse_err(
                path,
                hline,
                format!("unsupported symmetry {other:?}"),
            ))
        }
    };

    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (sline, size) = body
        .next()
        .ok_or_else(|| parse_err(path, hline + 1, "missing size line"))?;
    let size: Vec<&str> = size.split_whitespace().collect();
    let expected_size_fields = if layout == Layout::Array { 2 } else { 3 };
    if size.len() != expected_size_fields {
        return Err(parse_err(path, sline, "malformed size line"));
    }
    let rows = parse_usize(path, sline, size[0])?;
    let cols = parse_usize(path, sline, size[1])?;
    if rows == 0 || cols == 0 {
        return Err(parse_err(path, sline, "matrix dimensions must be positive"));
    }
    if symmetry == Symmetry::Symmetric && rows != cols {
        return Err(parse_err(path, sline, "symmetric matrix must be square"));
    }
    let mut data = vec![0.0; rows * cols];

    match layout {
        Layout::Array => {
            // column-major; symmetric stores the lower triangle only
            let mut slots = Vec::new();
            for j in 0..cols {
                let start = if symmetry == Symmetry::Symmetric {
                    j
                } else {
                    0
                };
                for i in start..rows {
                    slots.push((i, j));
                }
            }
            let mut last_line = sline;
            for &(i, j) in &slots {
                let (ln, l) = body
                    .next()
                    .ok_or_else(|| parse_err(path, last_line + 1, "too few matrix entries"))?;
                last_line = ln;
                let v = parse_f64(path, ln, l.trim())?;
                data[i * cols + j] = v;
                if symmetry == Symmetry::Symmetric {
                    data[j * cols + i] = v;
                }
            }
            if let Some((ln, _)) = body.next() {
                return Err(parse_err(path, ln, "unexpected trailing entries"));
            }
        }
        Layout::Coordinate => {
            let nnz = parse_usize(path, sline, size[2])?;
            let mut seen = 0;
            for (ln, l) in body {
                let toks: Vec<&str> = l.split_whitespace().collect();
                if toks.len() != 3 {
                    return Err(parse_err(path, ln, "expected 'row col value'"));
                }
                let i = parse_usize(path, ln, toks[0])?;
                let j = parse_usize(path, ln, toks[1])?;
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(parse_err(
                        path,
                        ln,
                        format!("index ({i}, {j}) out of range"),
                    ));
                }
                let v = parse_f64(path, ln, toks[2])?;
                data[(i - 1) * cols + (j - 1)] += v;
                if symmetry == Symmetry::Symmetric && i != j {
                    data[(j - 1) * cols + (i - 1)] += v;
                }
                seen += 1;
            }
            if seen != nnz {
                return Err(parse_err(
                    path,
                    sline,
                    format!("size line announces {nnz} entries, found {seen}"),
                ));
            }
        }
    }
    DenseMatrix::from_row_major(rows, cols, data)
}

/// Write a dense matrix in `array real general` layout.
pub fn write_matrix_market(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "%%MatrixMarket matrix array real general")?;
    writeln!(out, "{} {}", m.rows(), m.cols())?;
    for j in 0..m.cols() {
        for i in 0..m.rows() {
            writeln!(out, "{:e}", m.get(i, j))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One value per line; blank lines and lines starting with `#` or `%` are ignored.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut v = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with('%') {
            continue;
        }
        v.push(parse_f64(path, i + 1, t)?);
    }
    if v.is_empty() {
        return Err(parse_err(path, 1, "vector file contains no values"));
    }
    Ok(v)
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for x in v {
        writeln!(out, "{x:e}")?;
    }
    out.flush()?;
    Ok(())
}
