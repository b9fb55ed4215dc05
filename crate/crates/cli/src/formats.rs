//! File formats: vectors (one real per line), dense matrices (headerless
//! CSV, one row per line), sparse triplets (`i j v` per line, zero-based),
//! PGM images (P2/P5) and trace CSVs. Reals are written with 17 significant
//! digits so that a write-read round trip is exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use nsp_core::solver::TraceRow;

use crate::error::{CliError, CliResult};

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn parse_real(path: &Path, line: usize, tok: &str) -> CliResult<f64> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| CliError::input(path, format!("line {line}: cannot parse {tok:?} as a number")))?;
    if !v.is_finite() {
        return Err(CliError::input(path, format!("line {line}: non-finite value")));
    }
    Ok(v)
}

/// Skips blank lines and `#` comments.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_vector(path: &Path, text: &str) -> CliResult<Vec<f64>> {
    content_lines(text).map(|(n, l)| parse_real(path, n, l)).collect()
}

pub fn read_vector(path: &Path) -> CliResult<Vec<f64>> {
    parse_vector(path, &read_text(path)?)
}

pub fn render_vector(v: &[f64]) -> String {
    let mut s = String::with_capacity(v.len() * 24);
    for x in v {
        s.push_str(&fmt_real(*x));
        s.push('\n');
    }
    s
}

/// Row-major entries plus `(rows, cols)`.
pub fn read_dense_csv(path: &Path) -> CliResult<(usize, usize, Vec<f64>)> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut entries = Vec::new();
    let (mut rows, mut cols) = (0, None);
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::input(path, e))?;
        if cols.is_some_and(|c| c != rec.len()) {
            return Err(CliError::input(path, format!("row {} has {} columns, expected {}", i + 1, rec.len(), cols.unwrap())));
        }
        cols = Some(rec.len());
        for tok in rec.iter() {
            entries.push(parse_real(path, i + 1, tok)?);
        }
        rows += 1;
    }
    match cols {
        Some(c) if rows > 0 => Ok((rows, c, entries)),
        _ => Err(CliError::input(path, "empty matrix")),
    }
}

pub fn render_dense_csv(rows: usize, cols: usize, entries: &[f64]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in 0..rows {
        w.write_record(entries[r * cols..(r + 1) * cols].iter().map(|v| fmt_real(*v)))
            .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("ascii output")
}

pub fn read_triplets(path: &Path) -> CliResult<Vec<(usize, usize, f64)>> {
    let text = read_text(path)?;
    content_lines(&text)
        .map(|(n, l)| {
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(CliError::input(path, format!("line {n}: expected `i j value`")));
            }
            let idx = |t: &str| {
                t.parse::<usize>()
                    .map_err(|_| CliError::input(path, format!("line {n}: bad index {t:?}")))
            };
            Ok((idx(toks[0])?, idx(toks[1])?, parse_real(path, n, toks[2])?))
        })
        .collect()
}

pub fn render_triplets(triplets: &[(usize, usize, f64)]) -> String {
    triplets
        .iter()
        .map(|(i, j, v)| format!("{i} {j} {}\n", fmt_real(*v)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmEncoding {
    Ascii,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub encoding: PgmEncoding,
    /// Row-major pixel values in `0..=maxval`.
    pub pixels: Vec<f64>,
}

impl Pgm {
    /// Rounds and clamps reals to the image's bit depth.
    pub fn with_values(&self, values: &[f64]) -> Pgm {
        let max = f64::from(self.maxval);
        Pgm {
            pixels: values.iter().map(|v| v.round().clamp(0.0, max)).collect(),
            ..self.clone()
        }
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn token(&mut self) -> Option<&str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.bytes.get(self.pos) == Some(&b'#') {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or(""))
    }
}

pub fn parse_pgm(path: &Path, bytes: &[u8]) -> CliResult<Pgm> {
    let bad = |msg: &str| CliError::input(path, format!("invalid PGM: {msg}"));
    let mut h = HeaderReader { bytes, pos: 0 };
    let encoding = match h.token() {
        Some("P2") => PgmEncoding::Ascii,
        Some("P5") => PgmEncoding::Binary,
        _ => return Err(bad("expected magic P2 or P5")),
    };
    let mut num = |what: &str| -> CliResult<usize> {
        h.token()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(&format!("missing or invalid {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 || !(1..=65535).contains(&maxval) {
        return Err(bad("dimensions must be positive and maxval in 1..=65535"));
    }
    let n = width * height;
    let pixels: Vec<f64> = match encoding {
        PgmEncoding::Ascii => {
            let mut v = Vec::with_capacity(n);
            while let Some(t) = h.token() {
                let p: usize = t.parse().map_err(|_| bad(&format!("bad pixel {t:?}")))?;
                v.push(p);
            }
            if v.len() != n {
                return Err(bad(&format!("expected {n} pixels, found {}", v.len())));
            }
            v.into_iter().map(|p| p as f64).collect()
        }
        PgmEncoding::Binary => {
            // exactly one whitespace byte separates the header from the raster
            let start = h.pos + 1;
            let depth = if maxval > 255 { 2 } else { 1 };
            let raster = bytes.get(start..).unwrap_or(&[]);
            if raster.len() != n * depth {
                return Err(bad(&format!("expected {} raster bytes, found {}", n * depth, raster.len())));
            }
            if depth == 1 {
                raster.iter().map(|b| f64::from(*b)).collect()
            } else {
                raster
                    .chunks_exact(2)
                    .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])))
                    .collect()
            }
        }
    };
    if pixels.iter().any(|p| *p > maxval as f64) {
        return Err(bad("pixel exceeds maxval"));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        encoding,
        pixels,
    })
}

pub fn read_pgm(path: &Path) -> CliResult<Pgm> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_pgm(path, &bytes)
}

/// Pixels must already be integral and within `0..=maxval`.
pub fn render_pgm(img: &Pgm) -> Vec<u8> {
    let mut out = Vec::new();
    let magic = match img.encoding {
        PgmEncoding::Ascii => "P2",
        PgmEncoding::Binary => "P5",
    };
    write!(out, "{magic}\n{} {}\n{}\n", img.width, img.height, img.maxval).expect("writing to memory");
    match img.encoding {
        PgmEncoding::Ascii => {
            for row in img.pixels.chunks(img.width) {
                let line: Vec<String> = row.iter().map(|p| format!("{}", *p as u16)).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
        PgmEncoding::Binary => {
            for p in &img.pixels {
                let v = *p as u16;
                if img.maxval > 255 {
                    out.extend_from_slice(&v.to_be_bytes());
                } else {
                    out.push(v as u8);
                }
            }
        }
    }
    out
}

pub const TRACE_HEADER: [&str; 5] = ["n", "objective", "fp_residual", "dx_norm", "dw_norm"];

pub fn render_trace(rows: &[TraceRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER).expect("writing to memory");
    for r in rows {
        w.write_record([
            r.n.to_string(),
            fmt_real(r.objective),
            fmt_real(r.fp_residual),
            fmt_real(r.dx_norm),
            fmt_real(r.dw_norm),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("ascii output")
}

pub fn parse_trace(path: &Path, text: &str) -> CliResult<Vec<TraceRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| CliError::input(path, e))?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(CliError::input(path, "unexpected trace header"));
    }
    reader
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| CliError::input(path, e))?;
            let line = i + 2;
            let n = rec[0]
                .parse()
                .map_err(|_| CliError::input(path, format!("line {line}: bad iteration index")))?;
            let f = |k: usize| parse_real(path, line, &rec[k]);
            Ok(TraceRow {
                n,
                objective: f(1)?,
                fp_residual: f(2)?,
                dx_norm: f(3)?,
                dw_norm: f(4)?,
            })
        })
        .collect()
}

/// Writes every `(path, contents)` pair; callers prepare all contents first
/// so that a failure while computing leaves no partial output behind.
pub fn write_outputs(outputs: &[(&Path, &[u8])]) -> CliResult<()> {
    for (path, data) in outputs {
        fs::write(path, data).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}
