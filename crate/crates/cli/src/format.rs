//! Line-oriented matrix files.
//!
//! ```text
//! # comment
//! m n
//! p_1 ... p_m
//! <m rows of n entries>
//! K            (optional; m lines, line i has p_i entries)
//! E            (optional; same shape as K)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nsqstab::{BlockStructure, Detuning, GainMatrix, PlantMatrix, RealMatrix};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum FileError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: ParseError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub plant: PlantMatrix,
    pub gain: Option<GainMatrix>,
    pub detuning: Option<Detuning>,
}

#[derive(Debug)]
struct Token<'a> {
    text: &'a str,
    column: usize,
}

#[derive(Debug)]
struct Line<'a> {
    number: usize,
    tokens: Vec<Token<'a>>,
    end_column: usize,
}

fn err(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Vec<Line<'_>> {
    text.lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let content = raw.split('#').next().unwrap_or("");
            let mut tokens = Vec::new();
            let mut start = None;
            for (pos, ch) in content
                .char_indices()
                .chain(std::iter::once((content.len(), ' ')))
            {
                match (ch.is_whitespace(), start) {
                    (false, None) => start = Some(pos),
                    (true, Some(s)) => {
                        tokens.push(Token {
                            text: &content[s..pos],
                            column: content[..s].chars().count() + 1,
                        });
                        start = None;
                    }
                    _ => {}
                }
            }
            (!tokens.is_empty()).then(|| Line {
                number: i + 1,
                tokens,
                end_column: content.trim_end().chars().count() + 1,
            })
        })
        .collect()
}

fn parse_count(line: &Line, tok: &Token, what: &str) -> Result<usize, ParseError> {
    tok.text.parse::<usize>().map_err(|_| {
        err(
            line.number,
            tok.column,
            format!(
                "expected {what} (a nonnegative integer), found `{}`",
                tok.text
            ),
        )
    })
}

fn parse_entry(line: &Line, tok: &Token, nonnegative: bool) -> Result<f64, ParseError> {
    let v = tok.text.parse::<f64>().map_err(|_| {
        err(
            line.number,
            tok.column,
            format!("non-numeric token `{}`", tok.text),
        )
    })?;
    if !v.is_finite() {
        return Err(err(
            line.number,
            tok.column,
            format!("entry `{}` is not finite", tok.text),
        ));
    }
    if nonnegative && v < 0.0 {
        return Err(err(
            line.number,
            tok.column,
            format!("entry {v} must be nonnegative"),
        ));
    }
    Ok(v)
}

fn expect_len(line: &Line, want: usize, what: &str) -> Result<(), ParseError> {
    match line.tokens.len().cmp(&want) {
        std::cmp::Ordering::Equal => Ok(()),
        std::cmp::Ordering::Less => Err(err(
            line.number,
            line.end_column,
            format!("{what} needs {want} entries, found {}", line.tokens.len()),
        )),
        std::cmp::Ordering::Greater => Err(err(
            line.number,
            line.tokens[want].column,
            format!("{what} needs {want} entries, found {}", line.tokens.len()),
        )),
    }
}

fn eof(last: usize, what: &str) -> ParseError {
    err(
        last + 1,
        1,
        format!("unexpected end of input; expected {what}"),
    )
}

fn parse_block<'a>(
    lines: &mut std::slice::Iter<'a, Line<'a>>,
    sizes: &[usize],
    name: &str,
    last: &mut usize,
) -> Result<Vec<Vec<f64>>, ParseError> {
    sizes
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let line = lines
                .next()
                .ok_or_else(|| eof(*last, &format!("{name} row {}", i + 1)))?;
            *last = line.number;
            let what = format!("{name} row {}", i + 1);
            expect_len(line, p, &what)?;
            line.tokens
                .iter()
                .map(|t| parse_entry(line, t, true))
                .collect()
        })
        .collect()
}

pub fn parse_matrix_str(text: &str) -> Result<MatrixFile, ParseError> {
    let lines = lex(text);
    let mut it = lines.iter();
    let mut last = 0;

    let header = it.next().ok_or_else(|| eof(0, "header `m n`"))?;
    last = last.max(header.number);
    expect_len(header, 2, "header")?;
    let m = parse_count(header, &header.tokens[0], "row count m")?;
    let n = parse_count(header, &header.tokens[1], "column count n")?;
    if m == 0 {
        return Err(err(
            header.number,
            header.tokens[0].column,
            "row count m must be at least 1",
        ));
    }

    let size_line = it.next().ok_or_else(|| eof(last, "group sizes"))?;
    last = size_line.number;
    expect_len(size_line, m, "group size line")?;
    let sizes = size_line
        .tokens
        .iter()
        .map(|t| {
            let p = parse_count(size_line, t, "group size")?;
            if p == 0 {
                return Err(err(
                    size_line.number,
                    t.column,
                    "group sizes must be at least 1",
                ));
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let total: usize = sizes.iter().sum();
    if total != n {
        return Err(err(
            size_line.number,
            1,
            format!(
                "group sizes sum to {total} but header line {} declares n = {n}",
                header.number
            ),
        ));
    }

    let mut rows = Vec::with_capacity(m);
    for r in 0..m {
        let line = it
            .next()
            .ok_or_else(|| eof(last, &format!("matrix row {}", r + 1)))?;
        last = line.number;
        expect_len(line, n, &format!("matrix row {}", r + 1))?;
        rows.push(
            line.tokens
                .iter()
                .map(|t| parse_entry(line, t, false))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }

    let structure =
        BlockStructure::new(sizes.clone()).map_err(|e| err(size_line.number, 1, e.to_string()))?;
    let data = RealMatrix::from_rows(&rows).map_err(|e| err(header.number, 1, e.to_string()))?;
    let plant = PlantMatrix::new(structure.clone(), data)
        .map_err(|e| err(header.number, 1, e.to_string()))?;

    let mut gain = None;
    let mut detuning = None;
    while let Some(marker) = it.next() {
        last = marker.number;
        let tok = &marker.tokens[0];
        let slot_name = match tok.text {
            "K" | "E" => tok.text,
            other => {
                return Err(err(
                    marker.number,
                    tok.column,
                    format!("expected block marker `K` or `E`, found `{other}`"),
                ))
            }
        };
        if marker.tokens.len() > 1 {
            return Err(err(
                marker.number,
                marker.tokens[1].column,
                "block marker must stand alone on its line",
            ));
        }
        let taken = if slot_name == "K" {
            gain.is_some()
        } else {
            detuning.is_some()
        };
        if taken {
            return Err(err(
                marker.number,
                tok.column,
                format!("duplicate `{slot_name}` block"),
            ));
        }
        let values = parse_block(&mut it, &sizes, slot_name, &mut last)?;
        let at = |e: nsqstab::Error| err(marker.number, tok.column, e.to_string());
        if slot_name == "K" {
            gain = Some(GainMatrix::new(structure.clone(), values).map_err(at)?);
        } else {
            detuning = Some(Detuning::new(structure.clone(), values).map_err(at)?);
        }
    }

    Ok(MatrixFile {
        plant,
        gain,
        detuning,
    })
}

pub fn parse_matrix_file(path: &Path) -> Result<(MatrixFile, Vec<u8>), FileError> {
    let bytes = std::fs::read(path).map_err(|source| FileError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let parsed = parse_matrix_str(&text).map_err(|source| FileError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    Ok((parsed, bytes))
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Inverse of [`parse_matrix_str`]; entries use shortest round-trip decimals.
pub fn print_matrix_file(file: &MatrixFile) -> String {
    let s = file.plant.structure();
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", s.groups(), s.columns());
    let _ = writeln!(
        out,
        "{}",
        s.sizes()
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    );
    for row in file.plant.data().rows() {
        let _ = writeln!(out, "{}", join(&row));
    }
    for (name, block) in [
        ("K", file.gain.as_ref().map(|g| g.values())),
        ("E", file.detuning.as_ref().map(|e| e.values())),
    ] {
        if let Some(values) = block {
            let _ = writeln!(out, "{name}");
            for row in values {
                let _ = writeln!(out, "{}", join(row));
            }
        }
    }
    out
}

/// Human-readable matrix, one row per line.
pub fn format_matrix(m: &RealMatrix, indent: &str) -> String {
    m.rows()
        .iter()
        .map(|r| format!("{indent}[{}]\n", join(r)))
        .collect()
}
