//! Binary per-frame feature container.
//!
//! ```text
//! "DOAF" | version u16
//! repeated: frame_index u32 | P u16 | L u16 | P*L f32
//! ```
//!
//! All integers and floats are little-endian. A text sidecar maps each
//! frame index to its timestamp.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DOAF";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub frame_index: u32,
    pub rows: u16,
    pub cols: u16,
    pub values: Vec<f32>,
}

impl FeatureRecord {
    pub fn values_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Streaming writer; records land in call order.
pub struct FeatureWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl FeatureWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let mut header = MAGIC.to_vec();
        header.extend_from_slice(&VERSION.to_le_bytes());
        out.write_all(&header).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, out })
    }

    pub fn write(&mut self, frame_index: u32, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
        let (Ok(r), Ok(c)) = (u16::try_from(rows), u16::try_from(cols)) else {
            return Err(Error::format(&self.path, format!("record shape {rows}x{cols} does not fit u16")));
        };
        if values.len() != rows * cols {
            return Err(Error::format(
                &self.path,
                format!("{} values for a {rows}x{cols} record", values.len()),
            ));
        }
        let mut buf = Vec::with_capacity(8 + 4 * values.len());
        buf.extend_from_slice(&frame_index.to_le_bytes());
        buf.extend_from_slice(&r.to_le_bytes());
        buf.extend_from_slice(&c.to_le_bytes());
        for &v in values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.out.write_all(&buf).map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn parse_store(bytes: &[u8], path: &Path) -> Result<Vec<FeatureRecord>> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not a feature store (bad magic)"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::format(path, format!("feature store version {version}, expected {VERSION}")));
    }
    let mut pos = 6;
    let mut out = Vec::new();
    while pos < bytes.len() {
        if bytes.len() - pos < 8 {
            return Err(Error::format(path, "truncated record header"));
        }
        let frame_index = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
        let rows = u16::from_le_bytes([bytes[pos + 4], bytes[pos + 5]]);
        let cols = u16::from_le_bytes([bytes[pos + 6], bytes[pos + 7]]);
        pos += 8;
        let n = rows as usize * cols as usize;
        if bytes.len() - pos < 4 * n {
            return Err(Error::format(path, format!("truncated record for frame {frame_index}")));
        }
        let values = bytes[pos..pos + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += 4 * n;
        out.push(FeatureRecord {
            frame_index,
            rows,
            cols,
            values,
        });
    }
    Ok(out)
}

pub fn read_store(path: impl AsRef<Path>) -> Result<Vec<FeatureRecord>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_store(&bytes, path)
}

pub fn write_index(path: impl AsRef<Path>, entries: &[(u32, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("# frame_index timestamp_s\n");
    for (i, t) in entries {
        text.push_str(&format!("{i} {t}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_index(path: impl AsRef<Path>) -> Result<Vec<(u32, f64)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parsed = (|| {
            let i = parts.next()?.parse().ok()?;
            let t = parts.next()?.parse().ok()?;
            parts.next().is_none().then_some((i, t))
        })();
        out.push(parsed.ok_or_else(|| Error::format(path, format!("line {}: expected '<frame> <seconds>'", n + 1)))?);
    }
    Ok(out)
}
