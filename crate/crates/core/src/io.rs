//! Text COO tensor files and JSON model files.
//!
//! A COO file starts with a header line `N I_1 ... I_N` followed by one
//! line `i_1 ... i_N count` per nonzero. Indices in the file are 1-based.
//! Blank lines and lines starting with `#` are ignored.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kruskal::{FactorMatrix, KruskalModel};
use crate::sparse_tensor::{Shape, SparseCountTensor};

pub fn read_coo<R: Read>(reader: R) -> Result<SparseCountTensor> {
    let mut lines = BufReader::new(reader)
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l))
        .filter(|(_, l)| {
            l.as_ref().map_or(true, |s| {
                !s.trim().is_empty() && !s.trim_start().starts_with('#')
            })
        });

    let parse_err = |line: usize, message: String| Error::Parse { line, message };
    let io_err = |line: usize, e: std::io::Error| parse_err(line, e.to_string());

    let (line_no, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header line".into()))?;
    let header = header.map_err(|e| io_err(line_no, e))?;
    let fields: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(line_no, format!("bad header: {e}")))?;
    let (&n, dims) = fields
        .split_first()
        .ok_or_else(|| parse_err(line_no, "empty header".into()))?;
    if dims.len() != n {
        return Err(parse_err(
            line_no,
            format!("header declares {n} modes but lists {} sizes", dims.len()),
        ));
    }
    let shape = Shape::new(dims.to_vec())?;

    let mut entries = Vec::new();
    for (line_no, line) in lines {
        let line = line.map_err(|e| io_err(line_no, e))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != n + 1 {
            return Err(parse_err(
                line_no,
                format!("expected {} fields, found {}", n + 1, tokens.len()),
            ));
        }
        let mut index = Vec::with_capacity(n);
        for t in &tokens[..n] {
            let i: usize = t
                .parse()
                .map_err(|e| parse_err(line_no, format!("bad index {t:?}: {e}")))?;
            if i == 0 {
                return Err(parse_err(line_no, "indices are 1-based".into()));
            }
            index.push(i - 1);
        }
        let count: u64 = tokens[n]
            .parse()
            .map_err(|e| parse_err(line_no, format!("bad count {:?}: {e}", tokens[n])))?;
        entries.push((index, count));
    }
    SparseCountTensor::from_entries(shape, entries)
}

pub fn write_coo<W: Write>(tensor: &SparseCountTensor, writer: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    let dims = tensor.shape().dims();
    write!(w, "{}", dims.len())?;
    for d in dims {
        write!(w, " {d}")?;
    }
    writeln!(w)?;
    for (idx, count) in tensor.entries() {
        for i in idx {
            write!(w, "{} ", i + 1)?;
        }
        writeln!(w, "{count}")?;
    }
    w.flush()
}

pub fn read_coo_file(path: impl AsRef<Path>) -> Result<SparseCountTensor> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_coo(file)
}

pub fn write_coo_file(tensor: &SparseCountTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_coo(tensor, file).map_err(|e| Error::io(path, e))
}

/// Serialized form of a [`KruskalModel`]. Each factor is a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub dims: Vec<usize>,
    #[serde(rename = "R", alias = "rank")]
    pub rank: usize,
    pub lambda: Vec<f64>,
    pub factors: Vec<Vec<Vec<f64>>>,
}

impl From<&KruskalModel> for ModelFile {
    fn from(m: &KruskalModel) -> Self {
        Self {
            dims: m.dims(),
            rank: m.rank(),
            lambda: m.lambda().to_vec(),
            factors: m.factors().iter().map(FactorMatrix::to_rows).collect(),
        }
    }
}

impl TryFrom<ModelFile> for KruskalModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.lambda.len() != f.rank {
            return Err(Error::InvalidModel(format!(
                "lambda has {} entries, rank is {}",
                f.lambda.len(),
                f.rank
            )));
        }
        if f.factors.len() != f.dims.len() {
            return Err(Error::InvalidModel(format!(
                "{} factors for {} dims",
                f.factors.len(),
                f.dims.len()
            )));
        }
        let mut factors = Vec::with_capacity(f.factors.len());
        for (n, (rows, &d)) in f.factors.iter().zip(&f.dims).enumerate() {
            if rows.len() != d {
                return Err(Error::InvalidModel(format!(
                    "factor {n} has {} rows, dims say {d}",
                    rows.len()
                )));
            }
            factors.push(FactorMatrix::from_rows(rows)?);
        }
        KruskalModel::new(f.lambda, factors)
    }
}

pub fn write_model_file(model: &KruskalModel, path: impl AsRef<Path>) -> Result<()> {
    write_json(&ModelFile::from(model), path)
}

pub fn read_model_file(path: impl AsRef<Path>) -> Result<KruskalModel> {
    let file: ModelFile = read_json(path)?;
    file.try_into()
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)
        .and_then(|()| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
