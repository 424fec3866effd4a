//! Field files, CSV series and snapshot output.
//!
//! A field file is a JSON header
//!
//! ```json
//! { "d": 1, "m": 64, "times": [0.0, 0.5, 1.0], "format": "f64le", "data": "h.bin" }
//! ```
//!
//! next to a data file holding `times.len() * m^d` values, slice-major with
//! axis 0 fastest. `format` is `f64le` (raw little-endian doubles) or `csv`
//! (one line per slice). Relative `data` paths resolve against the header.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rdmd_core::field::FieldGrid;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    F64le,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldHeader {
    d: usize,
    m: usize,
    times: Vec<f64>,
    format: DataFormat,
    data: PathBuf,
}

pub fn read_field(path: &Path) -> Result<FieldGrid> {
    let text = fs::read_to_string(path).with_context(|| format!("reading field header {}", path.display()))?;
    let header: FieldHeader =
        serde_json::from_str(&text).with_context(|| format!("parsing field header {}", path.display()))?;
    let data = path.parent().unwrap_or(Path::new(".")).join(&header.data);
    let values = match header.format {
        DataFormat::F64le => {
            let bytes = fs::read(&data).with_context(|| format!("reading {}", data.display()))?;
            if bytes.len() % 8 != 0 {
                bail!("{}: length is not a multiple of 8", data.display());
            }
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect::<Vec<_>>()
        }
        DataFormat::Csv => {
            let text = fs::read_to_string(&data).with_context(|| format!("reading {}", data.display()))?;
            let mut out = Vec::new();
            for (line_no, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                for tok in line.split(',') {
                    let v: f64 = tok
                        .trim()
                        .parse()
                        .with_context(|| format!("{}:{}: bad number `{tok}`", data.display(), line_no + 1))?;
                    out.push(v);
                }
            }
            out
        }
    };
    FieldGrid::new(header.d, header.m, header.times, values).with_context(|| format!("field file {}", path.display()))
}

/// Writes `<stem>.json` and its data file next to it.
pub fn write_field(path: &Path, grid: &FieldGrid, format: DataFormat) -> Result<()> {
    let ext = match format {
        DataFormat::F64le => "bin",
        DataFormat::Csv => "csv",
    };
    let data = path.with_extension(ext);
    match format {
        DataFormat::F64le => {
            let bytes: Vec<u8> = grid.values().iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(&data, bytes)?;
        }
        DataFormat::Csv => {
            let mut s = String::new();
            for k in 0..grid.slices() {
                let row: Vec<String> = grid.slice(k).iter().map(|v| format!("{v:e}")).collect();
                s.push_str(&row.join(","));
                s.push('\n');
            }
            fs::write(&data, s)?;
        }
    }
    let header = FieldHeader {
        d: grid.dim(),
        m: grid.side(),
        times: grid.times().to_vec(),
        format,
        data: PathBuf::from(data.file_name().context("field path has no file name")?),
    };
    fs::write(path, serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

/// A table destined for a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                write!(s, "{v:e}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.csv", self.name));
        fs::write(&path, self.to_csv()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}
