//! Feature file formats.
//!
//! * CSV: one example per line, `d` comma-separated decimals and an optional
//!   trailing integer label. An optional first line `#d=<d>,labeled=<0|1>`
//!   fixes the layout; without it a trailing column is read as a label when
//!   every row ends in a plain integer literal.
//! * NPY: v1.0, `float32` or `float64`, shape `(T, d)`. Labels live in a
//!   sibling `<stem>.labels.npy` (`int64`, shape `(T,)`).
//! * RAW_F32: 16-byte header (`b"ILPC"`, u32 `T`, u32 `d`, u32 flags with
//!   bit 0 = labeled), `T*d` little-endian f32, then `T` i32 labels if flagged.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2};
use ndarray_npy::{ReadNpyError, ReadNpyExt, WriteNpyExt};

use super::FeatureSet;
use crate::error::{Error, Result};

const RAW_MAGIC: &[u8; 4] = b"ILPC";
const RAW_HEADER_LEN: usize = 16;
const RAW_FLAG_LABELED: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Npy,
    RawF32,
}

impl FeatureFormat {
    /// Guesses the format from a file extension (`.csv`, `.npy`, `.f32`/`.raw`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" | "txt" => Some(Self::Csv),
            "npy" => Some(Self::Npy),
            "f32" | "raw" | "ilpc" => Some(Self::RawF32),
            _ => None,
        }
    }
}

impl FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "npy" => Ok(Self::Npy),
            "raw" | "raw_f32" | "raw-f32" | "f32" => Ok(Self::RawF32),
            other => Err(Error::InvalidConfig(format!("unknown feature format {other:?}"))),
        }
    }
}

impl fmt::Display for FeatureFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Npy => "npy",
            Self::RawF32 => "raw",
        })
    }
}

pub fn load_features(path: impl AsRef<Path>, format: FeatureFormat) -> Result<FeatureSet> {
    let path = path.as_ref();
    let tag = format!("{}:{}", format, path.display());
    match format {
        FeatureFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let (data, labels) = parse_csv(&text)?;
            FeatureSet::new(data, labels, tag)
        }
        FeatureFormat::Npy => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let data = read_npy_matrix(&bytes)?;
            let labels_file = labels_path(path);
            let labels = if labels_file.exists() {
                let bytes = fs::read(&labels_file).map_err(|e| Error::io(&labels_file, e))?;
                let raw = Array1::<i64>::read_npy(&bytes[..]).map_err(npy_error)?;
                Some(checked_labels(raw.iter().copied())?)
            } else {
                None
            };
            FeatureSet::new(data, labels, tag)
        }
        FeatureFormat::RawF32 => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let (data, labels) = parse_raw(&bytes)?;
            FeatureSet::new(data, labels, tag)
        }
    }
}

pub fn save_features(fs_: &FeatureSet, path: impl AsRef<Path>, format: FeatureFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        FeatureFormat::Csv => render_csv(fs_).into_bytes(),
        FeatureFormat::Npy => {
            if let Some(labels) = fs_.labels() {
                let labels = Array1::from_iter(labels.iter().map(|&l| l as i64));
                let mut out = Vec::new();
                labels.write_npy(&mut out).map_err(write_npy_error)?;
                let labels_file = labels_path(path);
                fs::write(&labels_file, out).map_err(|e| Error::io(&labels_file, e))?;
            }
            let mut out = Vec::new();
            fs_.data().write_npy(&mut out).map_err(write_npy_error)?;
            out
        }
        FeatureFormat::RawF32 => render_raw(fs_)?,
    };
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// `dir/feats.npy` -> `dir/feats.labels.npy`.
pub fn labels_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.labels.npy"))
}

fn parse_csv(text: &str) -> Result<(Array2<f64>, Option<Vec<usize>>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();

    let Some(&(_, first)) = lines.peek() else {
        return Err(Error::MalformedHeader("empty file".into()));
    };
    let header = if first.trim_start().starts_with('#') {
        lines.next();
        Some(parse_csv_header(first.trim())?)
    } else {
        None
    };

    let rows: Vec<(usize, Vec<&str>)> = lines
        .map(|(n, l)| (n, l.split(',').map(str::trim).collect()))
        .collect();
    if rows.is_empty() {
        return Err(Error::MalformedHeader("no data rows".into()));
    }

    let (dim, labeled) = match header {
        Some(h) => h,
        None => {
            let width = rows[0].1.len();
            let labeled = width >= 2
                && rows
                    .iter()
                    .all(|(_, f)| f.last().is_some_and(|s| is_integer_literal(s)));
            (width - usize::from(labeled), labeled)
        }
    };
    let width = dim + usize::from(labeled);

    let mut data = Array2::zeros((rows.len(), dim));
    let mut raw_labels = Vec::with_capacity(if labeled { rows.len() } else { 0 });
    for (row, (line_no, fields)) in rows.iter().enumerate() {
        if fields.len() != width {
            return Err(Error::MalformedRow {
                row,
                reason: format!(
                    "line {} has {} fields, expected {width}",
                    line_no + 1,
                    fields.len()
                ),
            });
        }
        for (col, field) in fields[..dim].iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::MalformedRow {
                row,
                reason: format!("cannot parse {field:?} in column {col}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            data[[row, col]] = v;
        }
        if labeled {
            let field = fields[dim];
            let label: i64 = field.parse().map_err(|_| Error::MalformedRow {
                row,
                reason: format!("cannot parse label {field:?}"),
            })?;
            raw_labels.push(label);
        }
    }
    let labels = if labeled {
        Some(checked_labels(raw_labels)?)
    } else {
        None
    };
    Ok((data, labels))
}

fn parse_csv_header(line: &str) -> Result<(usize, bool)> {
    let body = line.trim_start_matches('#').trim();
    let mut dim = None;
    let mut labeled = None;
    for part in body.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::MalformedHeader(format!("expected key=value, got {part:?}")))?;
        match key.trim() {
            "d" => {
                dim = Some(
                    value
                        .trim()
                        .parse::<usize>()
                        .ok()
                        .filter(|&d| d > 0)
                        .ok_or_else(|| Error::MalformedHeader(format!("bad d {value:?}")))?,
                )
            }
            "labeled" => {
                labeled = Some(match value.trim() {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(Error::MalformedHeader(format!("bad labeled flag {other:?}")))
                    }
                })
            }
            other => return Err(Error::MalformedHeader(format!("unknown key {other:?}"))),
        }
    }
    let dim = dim.ok_or_else(|| Error::MalformedHeader("missing d".into()))?;
    Ok((dim, labeled.unwrap_or(false)))
}

fn is_integer_literal(s: &str) -> bool {
    let digits = s.strip_prefix('-').unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

fn checked_labels(raw: impl IntoIterator<Item = i64>) -> Result<Vec<usize>> {
    let raw: Vec<i64> = raw.into_iter().collect();
    let classes = raw.iter().copied().max().map_or(0, |m| (m.max(-1) + 1) as usize);
    raw.into_iter()
        .enumerate()
        .map(|(row, label)| {
            usize::try_from(label).map_err(|_| Error::LabelOutOfRange {
                row,
                label,
                classes,
            })
        })
        .collect()
}

fn render_csv(fs_: &FeatureSet) -> String {
    let labels = fs_.labels();
    let mut out = format!("#d={},labeled={}\n", fs_.dim(), u8::from(labels.is_some()));
    for (i, row) in fs_.data().rows().into_iter().enumerate() {
        let mut fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        if let Some(labels) = labels {
            fields.push(labels[i].to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn read_npy_matrix(bytes: &[u8]) -> Result<Array2<f64>> {
    match Array2::<f64>::read_npy(bytes) {
        Ok(a) => Ok(a),
        Err(ReadNpyError::WrongDescriptor(_)) => Array2::<f32>::read_npy(bytes)
            .map(|a| a.mapv(f64::from))
            .map_err(npy_error),
        Err(e) => Err(npy_error(e)),
    }
}

fn npy_error(e: ReadNpyError) -> Error {
    match e {
        ReadNpyError::Io(e) => Error::MalformedHeader(format!("truncated npy file: {e}")),
        ReadNpyError::MissingData => Error::MalformedRow {
            row: 0,
            reason: "npy data shorter than header shape".into(),
        },
        other => Error::MalformedHeader(other.to_string()),
    }
}

fn write_npy_error(e: ndarray_npy::WriteNpyError) -> Error {
    match e {
        ndarray_npy::WriteNpyError::Io(e) => Error::io("<npy buffer>", e),
        other => Error::Shape(other.to_string()),
    }
}

fn parse_raw(bytes: &[u8]) -> Result<(Array2<f64>, Option<Vec<usize>>)> {
    if bytes.len() < RAW_HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "raw file has {} bytes, header needs {RAW_HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[..4] != RAW_MAGIC {
        return Err(Error::MalformedHeader("bad magic, expected \"ILPC\"".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols, flags) = (word(4), word(8), word(12) as u32);
    let labeled = flags & RAW_FLAG_LABELED != 0;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_add(if labeled { rows } else { 0 }))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(RAW_HEADER_LEN))
        .ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::MalformedHeader(format!(
            "{rows}x{cols} (labeled={labeled}) needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let body = &bytes[RAW_HEADER_LEN..];
    let mut data = Array2::zeros((rows, cols));
    for (i, chunk) in body[..rows * cols * 4].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite {
                row: i / cols,
                col: i % cols,
            });
        }
        data[[i / cols, i % cols]] = f64::from(v);
    }
    let labels = if labeled {
        let raw = body[rows * cols * 4..]
            .chunks_exact(4)
            .map(|c| i64::from(i32::from_le_bytes(c.try_into().unwrap())));
        Some(checked_labels(raw)?)
    } else {
        None
    };
    Ok((data, labels))
}

fn render_raw(fs_: &FeatureSet) -> Result<Vec<u8>> {
    let (rows, cols) = fs_.data().dim();
    let as_u32 = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::Shape(format!("{what} = {n} exceeds u32")))
    };
    let labels = fs_.labels();
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + rows * cols * 4 + rows * 4);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&as_u32(rows, "T")?.to_le_bytes());
    out.extend_from_slice(&as_u32(cols, "d")?.to_le_bytes());
    let flags = if labels.is_some() { RAW_FLAG_LABELED } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    for &v in fs_.data().iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(labels) = labels {
        for &l in labels {
            let l = i32::try_from(l).map_err(|_| Error::Shape(format!("label {l} exceeds i32")))?;
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}
