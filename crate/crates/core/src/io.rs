//! Plain-text artifact formats: COO tensors and matrices, headerless CSV
//! tables, and atomic file writes.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nmf::SparseMatrix;
use crate::tensor::SparseTensor3;

/// Shortest round-trip decimal form; integral values print without a fraction.
pub fn fmt_f64(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

/// Writes `contents` to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Input(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Reads a file of one item per line, trimming whitespace and skipping blanks.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(l.as_ref());
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

struct LineReader {
    path: PathBuf,
    lines: std::iter::Enumerate<std::io::Lines<BufReader<fs::File>>>,
}

impl LineReader {
    fn open(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            lines: BufReader::new(file).lines().enumerate(),
        })
    }

    /// Next non-blank line, split on whitespace, with its 1-based number.
    fn next_fields(&mut self) -> Result<Option<(usize, Vec<String>)>> {
        for (i, line) in self.lines.by_ref() {
            let line = line.map_err(|e| Error::io(&self.path, e))?;
            let fields: Vec<String> = line.split_whitespace().map(String::from).collect();
            if !fields.is_empty() {
                return Ok(Some((i + 1, fields)));
            }
        }
        Ok(None)
    }

    fn err(&self, line: usize, detail: impl Into<String>) -> Error {
        Error::parse(&self.path, line, detail)
    }

    fn parse_usize(&self, line: usize, s: &str) -> Result<usize> {
        s.parse()
            .map_err(|_| self.err(line, format!("expected a nonnegative integer, got {s:?}")))
    }

    fn parse_f64(&self, line: usize, s: &str) -> Result<f64> {
        s.parse()
            .map_err(|_| self.err(line, format!("expected a decimal value, got {s:?}")))
    }
}

/// Header `M N O NNZ`, then `m n o value` per line (0-based, sorted).
pub fn write_tensor(path: &Path, x: &SparseTensor3) -> Result<()> {
    let [m, n, o] = x.dims();
    let mut buf = BufWriter::new(Vec::new());
    let io = |e| Error::io(path, e);
    writeln!(buf, "{m} {n} {o} {}", x.nnz()).map_err(io)?;
    for e in x.entries() {
        let [i, j, k] = e.coord;
        writeln!(buf, "{i} {j} {k} {}", fmt_f64(e.value)).map_err(io)?;
    }
    let bytes = buf.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Reads the COO tensor format; entries may come in any order.
pub fn read_tensor(path: &Path) -> Result<SparseTensor3> {
    let mut reader = LineReader::open(path)?;
    let (hline, header) = reader
        .next_fields()?
        .ok_or_else(|| reader.err(1, "missing `M N O NNZ` header"))?;
    if header.len() != 4 {
        return Err(reader.err(hline, "header must be `M N O NNZ`"));
    }
    let mut h = [0usize; 4];
    for (slot, s) in h.iter_mut().zip(&header) {
        *slot = reader.parse_usize(hline, s)?;
    }
    let dims = [h[0], h[1], h[2]];
    let mut raw = Vec::with_capacity(h[3]);
    while let Some((line, fields)) = reader.next_fields()? {
        if fields.len() != 4 {
            return Err(reader.err(line, "entry must be `m n o value`"));
        }
        let coord = [
            reader.parse_usize(line, &fields[0])?,
            reader.parse_usize(line, &fields[1])?,
            reader.parse_usize(line, &fields[2])?,
        ];
        raw.push((coord, reader.parse_f64(line, &fields[3])?));
    }
    if raw.len() != h[3] {
        return Err(reader.err(hline, format!("header declares {} entries, found {}", h[3], raw.len())));
    }
    SparseTensor3::build(dims, raw)
}

/// Header `ROWS COLS NNZ`, then `i j value` per line.
pub fn write_matrix(path: &Path, mx: &SparseMatrix) -> Result<()> {
    let (rows, cols) = mx.dims();
    let mut out = format!("{rows} {cols} {}\n", mx.nnz());
    for &(i, j, v) in mx.entries() {
        out.push_str(&format!("{i} {j} {}\n", fmt_f64(v)));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_matrix(path: &Path) -> Result<SparseMatrix> {
    let mut reader = LineReader::open(path)?;
    let (hline, header) = reader
        .next_fields()?
        .ok_or_else(|| reader.err(1, "missing `ROWS COLS NNZ` header"))?;
    if header.len() != 3 {
        return Err(reader.err(hline, "header must be `ROWS COLS NNZ`"));
    }
    let rows = reader.parse_usize(hline, &header[0])?;
    let cols = reader.parse_usize(hline, &header[1])?;
    let nnz = reader.parse_usize(hline, &header[2])?;
    let mut raw = Vec::with_capacity(nnz);
    while let Some((line, fields)) = reader.next_fields()? {
        if fields.len() != 3 {
            return Err(reader.err(line, "entry must be `i j value`"));
        }
        raw.push((
            reader.parse_usize(line, &fields[0])?,
            reader.parse_usize(line, &fields[1])?,
            reader.parse_f64(line, &fields[2])?,
        ));
    }
    if raw.len() != nnz {
        return Err(reader.err(hline, format!("header declares {nnz} entries, found {}", raw.len())));
    }
    SparseMatrix::build((rows, cols), raw)
}

/// Headerless comma-separated row-major table.
pub fn write_table(path: &Path, cols: usize, values: &[f64]) -> Result<()> {
    let mut out = String::new();
    for row in values.chunks(cols.max(1)) {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a headerless CSV table, returning `(rows, cols, values)`.
pub fn read_table(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cols = None;
    let mut rows = 0;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, i + 1, format!("bad number {s:?}")))
            })
            .collect::<Result<_>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::parse(path, i + 1, format!("expected {c} columns, got {}", row.len())))
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    Ok((rows, cols.unwrap_or(0), values))
}
