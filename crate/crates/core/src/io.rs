//! Dense matrix and embedding file formats.
//!
//! Binary form: raw little-endian `f32` values in row-major order, with a
//! JSON sidecar (same path, `.json` extension) carrying the shape and
//! optional row labels. Text form: a `rows cols` header followed by one
//! `token v1 .. vD` line per row with six significant digits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const F32_LE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub format: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_labels: Option<Vec<String>>,
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn write_f32_le<T: Scalar, W: Write>(values: &[T], mut w: W) -> std::io::Result<()> {
    for &v in values {
        w.write_all(&v.to_le_f32_bytes())?;
    }
    Ok(())
}

pub fn read_f32_le<T: Scalar, R: Read>(mut r: R, count: usize) -> std::io::Result<Vec<T>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| T::from_le_f32_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    Ok(serde_json::from_reader(open(path)?)?)
}

/// Writes `path` (binary) and its JSON sidecar.
pub fn save_dense<T: Scalar>(path: impl AsRef<Path>, m: &Matrix<T>, row_labels: Option<&[String]>) -> Result<()> {
    let path = path.as_ref();
    if let Some(labels) = row_labels {
        if labels.len() != m.rows() {
            return Err(Error::Shape(format!(
                "{} row labels for {} rows",
                labels.len(),
                m.rows()
            )));
        }
    }
    let header = MatrixHeader {
        format: F32_LE.into(),
        rows: m.rows(),
        cols: m.cols(),
        row_labels: row_labels.map(<[String]>::to_vec),
    };
    let mut w = create(path)?;
    write_f32_le(m.as_slice(), &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))?;
    write_json(&sidecar_path(path), &header)
}

pub fn load_dense<T: Scalar>(path: impl AsRef<Path>) -> Result<(Matrix<T>, MatrixHeader)> {
    let path = path.as_ref();
    let header: MatrixHeader = read_json(&sidecar_path(path))?;
    if header.format != F32_LE {
        return Err(Error::Format(format!("unsupported matrix format {:?}", header.format)));
    }
    let expected = (header.rows * header.cols * 4) as u64;
    let actual = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    if actual != expected {
        return Err(Error::Format(format!(
            "{} holds {actual} bytes, header implies {expected}",
            path.display()
        )));
    }
    let data = read_f32_le(open(path)?, header.rows * header.cols).map_err(|e| Error::io(path, e))?;
    Ok((Matrix::from_vec(header.rows, header.cols, data)?, header))
}

/// `%g`-style formatting with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci.split_once('e').and_then(|(_, e)| e.parse().ok()).unwrap_or(0);
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_owned()
        } else {
            s
        }
    } else {
        let (mantissa, e) = sci.split_once('e').expect("scientific format has an exponent");
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        let sign = if exp < 0 { '-' } else { '+' };
        let digits = e.trim_start_matches('-');
        format!("{mantissa}e{sign}{digits:0>2}")
    }
}

pub fn write_text_embeddings<T: Scalar, W: Write>(tokens: &[String], m: &Matrix<T>, mut w: W) -> Result<()> {
    if tokens.len() != m.rows() {
        return Err(Error::Shape(format!("{} tokens for {} rows", tokens.len(), m.rows())));
    }
    let io = |e| Error::io("<embeddings>", e);
    writeln!(w, "{} {}", m.rows(), m.cols()).map_err(io)?;
    for (tok, row) in tokens.iter().zip(m.iter_rows()) {
        write!(w, "{tok}").map_err(io)?;
        for &v in row {
            write!(w, " {}", format_sig6(v.as_f64())).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    Ok(())
}

pub fn read_text_embeddings<T: Scalar, R: BufRead>(reader: R) -> Result<(Vec<String>, Matrix<T>)> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("embedding file is empty".into()))?
        .map_err(|e| Error::io("<embeddings>", e))?;
    let mut parts = header.split_whitespace().map(str::parse::<usize>);
    let (rows, cols) = match (parts.next(), parts.next(), parts.next()) {
        (Some(Ok(r)), Some(Ok(c)), None) => (r, c),
        _ => {
            return Err(Error::MalformedLine {
                line: 1,
                reason: format!("expected `rows cols`, found {header:?}"),
            })
        }
    };
    let mut tokens = Vec::with_capacity(rows);
    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io("<embeddings>", e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let tok = fields.next().unwrap_or_default();
        let before = data.len();
        for f in fields {
            let v: f64 = f.parse().map_err(|_| Error::MalformedLine {
                line: i + 2,
                reason: format!("bad value {f:?}"),
            })?;
            data.push(T::of(v));
        }
        if data.len() - before != cols {
            return Err(Error::MalformedLine {
                line: i + 2,
                reason: format!("expected {cols} values, found {}", data.len() - before),
            });
        }
        tokens.push(tok.to_owned());
    }
    if tokens.len() != rows {
        return Err(Error::Format(format!(
            "header says {rows} rows, found {}",
            tokens.len()
        )));
    }
    Ok((tokens, Matrix::from_vec(rows, cols, data)?))
}

pub fn save_text_embeddings<T: Scalar>(path: impl AsRef<Path>, tokens: &[String], m: &Matrix<T>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    write_text_embeddings(tokens, m, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_text_embeddings<T: Scalar>(path: impl AsRef<Path>) -> Result<(Vec<String>, Matrix<T>)> {
    read_text_embeddings(open(path.as_ref())?)
}
