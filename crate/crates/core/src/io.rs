//! Dataset CSV files and JSON artifacts.
//!
//! A dataset has a header `x1..xp,a1..aK,r[,pi]`: real covariates, treatment
//! entries in {-1, +1}, the outcome and an optional known propensity in
//! `(0, 1]`. Reals are written with 17 significant digits so that a write
//! followed by a read reproduces every value exactly.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::combo::{Combo, LabeledSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    /// Per-row propensities, present iff the file has a `pi` column.
    pub pi: Option<Vec<f64>>,
}

impl Dataset {
    pub fn p(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }

    pub fn k(&self) -> usize {
        self.samples.first().map_or(0, |s| s.a.k())
    }
}

struct Layout {
    p: usize,
    k: usize,
    has_pi: bool,
}

fn data_error(name: &str, message: impl Into<String>) -> Error {
    Error::Data {
        path: name.to_string(),
        message: message.into(),
    }
}

fn parse_header(name: &str, header: &csv::StringRecord) -> Result<Layout> {
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let count = |prefix: &str| {
        cols.iter()
            .take_while(|c| c.starts_with(prefix))
            .count()
    };
    let p = count("x");
    let k = cols[p..].iter().take_while(|c| c.starts_with('a')).count();
    let rest = &cols[p + k..];
    for (i, c) in cols[..p].iter().enumerate() {
        if *c != format!("x{}", i + 1) {
            return Err(data_error(name, format!("header column {} is '{c}', expected 'x{}'", i + 1, i + 1)));
        }
    }
    for (i, c) in cols[p..p + k].iter().enumerate() {
        if *c != format!("a{}", i + 1) {
            return Err(data_error(
                name,
                format!("header column {} is '{c}', expected 'a{}'", p + i + 1, i + 1),
            ));
        }
    }
    if k == 0 {
        return Err(data_error(name, "header has no treatment columns a1..aK"));
    }
    let has_pi = match rest {
        ["r"] => false,
        ["r", "pi"] => true,
        _ => {
            return Err(data_error(
                name,
                format!("header must end with 'r' or 'r,pi', found '{}'", rest.join(",")),
            ))
        }
    };
    Ok(Layout { p, k, has_pi })
}

/// Parse dataset CSV text; `name` labels error messages.
pub fn parse_dataset(reader: impl Read, name: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(data_error(name, "empty file"));
    }
    let layout = parse_header(name, &header)?;
    let width = header.len();
    let mut samples = Vec::new();
    let mut pi = layout.has_pi.then(Vec::new);
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| data_error(name, format!("row {row}: {e}")))?;
        if record.len() != width {
            return Err(data_error(
                name,
                format!("row {row}: expected {width} columns, found {}", record.len()),
            ));
        }
        let real = |j: usize| -> Result<f64> {
            let cell = &record[j];
            if cell.is_empty() {
                return Err(data_error(name, format!("row {row}, column {}: missing value", &header[j])));
            }
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| data_error(name, format!("row {row}, column {}: '{cell}' is not a finite number", &header[j])))
        };
        let x = (0..layout.p).map(real).collect::<Result<Vec<_>>>()?;
        let a = (layout.p..layout.p + layout.k)
            .map(|j| match &record[j] {
                "1" | "+1" => Ok(1),
                "-1" => Ok(-1),
                other => Err(data_error(
                    name,
                    format!("row {row}, column {}: '{other}' is not -1 or +1", &header[j]),
                )),
            })
            .collect::<Result<Vec<i8>>>()?;
        let r = real(layout.p + layout.k)?;
        if let Some(pi) = pi.as_mut() {
            let v = real(layout.p + layout.k + 1)?;
            if !(v > 0.0 && v <= 1.0) {
                return Err(data_error(name, format!("row {row}, column pi: {v} outside (0, 1]")));
            }
            pi.push(v);
        }
        samples.push(LabeledSample::new(x, Combo::new(a)?, r));
    }
    if samples.is_empty() {
        return Err(data_error(name, "no data rows"));
    }
    Ok(Dataset { samples, pi })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let name = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| data_error(&name, e.to_string()))?;
    parse_dataset(file, &name)
}

pub fn dataset_csv(samples: &[LabeledSample], pi: Option<&[f64]>) -> Result<String> {
    let first = samples.first().ok_or(Error::Empty("dataset"))?;
    let (p, k) = (first.x.len(), first.a.k());
    if let Some(pi) = pi {
        if pi.len() != samples.len() {
            return Err(Error::DimensionMismatch {
                context: "propensity column",
                expected: samples.len(),
                actual: pi.len(),
            });
        }
    }
    let mut cols: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    cols.extend((1..=k).map(|j| format!("a{j}")));
    cols.push("r".into());
    if pi.is_some() {
        cols.push("pi".into());
    }
    let mut out = cols.join(",");
    out.push('\n');
    for (i, s) in samples.iter().enumerate() {
        if s.x.len() != p || s.a.k() != k {
            return Err(Error::DimensionMismatch {
                context: "dataset row",
                expected: p + k,
                actual: s.x.len() + s.a.k(),
            });
        }
        let mut cells: Vec<String> = s.x.iter().map(|v| format!("{v:.16e}")).collect();
        cells.extend(s.a.as_slice().iter().map(i8::to_string));
        cells.push(format!("{:.16e}", s.r));
        if let Some(pi) = pi {
            cells.push(format!("{:.16e}", pi[i]));
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, samples: &[LabeledSample], pi: Option<&[f64]>) -> Result<()> {
    write_text(path, &dataset_csv(samples, pi)?)
}

/// Write `contents`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents).map_err(|e| data_error(&path.display().to_string(), e.to_string()))
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_pretty(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| data_error(&name, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| data_error(&name, e.to_string()))
}
