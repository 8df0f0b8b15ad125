//! File formats shared by the CLI and FFI layers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spd::SymPosDef;

/// Serde adapter for dense matrices: `{"rows": r, "cols": c, "data": [row-major]}`.
pub mod dense {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Dense {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        Dense { rows: m.nrows(), cols: m.ncols(), data: super::row_major(m) }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let dense = Dense::deserialize(d)?;
        if dense.data.len() != dense.rows * dense.cols {
            return Err(serde::de::Error::custom(format!(
                "expected {} entries for a {}x{} matrix, found {}",
                dense.rows * dense.cols,
                dense.rows,
                dense.cols,
                dense.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(dense.rows, dense.cols, &dense.data))
    }
}

/// Serde adapter for a list of dense matrices.
pub mod dense_vec {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(transparent)]
    struct Item(#[serde(with = "super::dense")] DMatrix<f64>);

    pub fn serialize<S: Serializer>(v: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|m| Item(m.clone())).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Ok(Vec::<Item>::deserialize(d)?.into_iter().map(|i| i.0).collect())
    }
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// A covariance matrix with an optional integer class label.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<i64>,
}

impl LabeledMatrix {
    pub fn to_spd(&self) -> Result<SymPosDef> {
        SymPosDef::from_row_major(self.dim, &self.data)
    }
}

/// Read a JSON array of matrices, labels optional.
pub fn read_labeled_set(path: &Path) -> Result<(Vec<SymPosDef>, Option<Vec<i64>>)> {
    let items: Vec<LabeledMatrix> = read_json(path)?;
    if items.is_empty() {
        return Err(Error::Schema(format!("{}: empty matrix set", path.display())));
    }
    let covs = items.iter().map(LabeledMatrix::to_spd).collect::<Result<Vec<_>>>()?;
    let labeled = items.iter().filter(|m| m.label.is_some()).count();
    let labels = match labeled {
        0 => None,
        n if n == items.len() => Some(items.iter().map(|m| m.label.unwrap()).collect()),
        _ => return Err(Error::Schema("labels must be present on all matrices or none".into())),
    };
    Ok((covs, labels))
}

pub fn write_labeled_set(path: &Path, covs: &[SymPosDef], labels: Option<&[i64]>) -> Result<()> {
    let items: Vec<LabeledMatrix> = covs
        .iter()
        .enumerate()
        .map(|(i, c)| LabeledMatrix { dim: c.dim(), data: c.to_row_major(), label: labels.map(|l| l[i]) })
        .collect();
    write_json(path, &items)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Write samples as CSV with a `ch0,ch1,...` header, one row per time sample.
pub fn write_signals_csv(path: &Path, samples: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..samples.ncols()).map(|j| format!("ch{j}")))?;
    let mut row = Vec::with_capacity(samples.ncols());
    for i in 0..samples.nrows() {
        row.clear();
        row.extend((0..samples.ncols()).map(|j| samples[(i, j)].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a signal CSV; the header row is optional and detected by a
/// non-numeric first field.
pub fn read_signals_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Schema(format!("{}: line {}: {e}", path.display(), line + 1))),
        }
    }
    let cols = rows.first().map(Vec::len).ok_or_else(|| Error::Schema(format!("{}: no samples", path.display())))?;
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Schema(format!("{}: ragged rows", path.display())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}
