//! Correlated time series dataset container and on-disk format.
//!
//! A dataset directory holds `meta.json`, `values.bin` (raw little-endian
//! float32, row-major `N x T x F`) and optionally `adj.csv` (`N` rows of `N`
//! nonnegative weights). `values.csv` (T rows, `N*F` columns, feature-major
//! per node) is accepted as a fallback when `values.bin` is absent.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DTYPE: &str = "float32";
pub const LAYOUT: &str = "row-major N×T×F";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub name: String,
    pub n_nodes: usize,
    pub n_steps: usize,
    pub n_features: usize,
    pub has_adjacency: bool,
    pub dtype: String,
    pub layout: String,
}

/// Raw correlated series tensor `[N, T, F]` plus graph and split metadata.
#[derive(Debug, Clone)]
pub struct CtsDataset<F: Scalar> {
    pub values: Array3<F>,
    pub timestamps: Option<Vec<i64>>,
    pub adjacency: Option<Array2<F>>,
    pub name: String,
}

impl<F: Scalar> CtsDataset<F> {
    pub fn new(
        values: Array3<F>,
        adjacency: Option<Array2<F>>,
        name: impl Into<String>,
    ) -> Result<Self> {
        let ds = CtsDataset {
            values,
            timestamps: None,
            adjacency,
            name: name.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_nodes(&self) -> usize {
        self.values.shape()[0]
    }
    pub fn n_steps(&self) -> usize {
        self.values.shape()[1]
    }
    pub fn n_features(&self) -> usize {
        self.values.shape()[2]
    }

    fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("NaN or Inf in values"));
        }
        if let Some(adj) = &self.adjacency {
            let n = self.n_nodes();
            if adj.nrows() != n || adj.ncols() != n {
                return Err(Error::shape(format!(
                    "adjacency shape mismatch: expected {n}x{n}, got {}x{}",
                    adj.nrows(),
                    adj.ncols()
                )));
            }
            if adj.iter().any(|v| *v < F::zero()) {
                return Err(Error::data("adjacency has negative entries"));
            }
            if adj.iter().any(|v| !v.is_finite()) {
                return Err(Error::data("adjacency has non-finite entries"));
            }
        }
        if let Some(ts) = &self.timestamps {
            if ts.len() != self.n_steps() {
                return Err(Error::shape("timestamps length != n_steps"));
            }
            if ts.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::data("timestamps not strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            name: self.name.clone(),
            n_nodes: self.n_nodes(),
            n_steps: self.n_steps(),
            n_features: self.n_features(),
            has_adjacency: self.adjacency.is_some(),
            dtype: DTYPE.to_string(),
            layout: LAYOUT.to_string(),
        }
    }

    /// Content hash over metadata, values payload and adjacency.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.meta()).expect("meta serializes"));
        for v in self.values.iter() {
            h.update((v.to_f64_lossy() as f32).to_le_bytes());
        }
        if let Some(adj) = &self.adjacency {
            for v in adj.iter() {
                h.update((v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
        hex_digest(h)
    }
}

fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_numeric_csv(text: &str, what: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        match row {
            Ok(r) => rows.push(r),
            Err(e) => {
                return Err(Error::data(format!(
                    "{what}: line {}: {e}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(rows)
}

/// Load a dataset directory; fails rather than silently truncating.
pub fn load_dataset<F: Scalar>(dir: impl AsRef<Path>) -> Result<CtsDataset<F>> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path)
        .map_err(|e| Error::data(format!("missing file {}: {e}", meta_path.display())))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::data(format!("meta.json: {e}")))?;
    if meta.dtype != DTYPE {
        return Err(Error::data(format!("unsupported dtype {:?}", meta.dtype)));
    }
    let (n, t, f) = (meta.n_nodes, meta.n_steps, meta.n_features);
    let expected = n * t * f;

    let bin_path = dir.join("values.bin");
    let raw: Vec<f32> = if bin_path.exists() {
        let mut bytes = Vec::new();
        fs::File::open(&bin_path)?.read_to_end(&mut bytes)?;
        if bytes.len() != expected * 4 {
            return Err(Error::shape(format!(
                "values.bin holds {} values, descriptor expects {expected}",
                bytes.len() / 4
            )));
        }
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    } else {
        let csv_path = dir.join("values.csv");
        let text = fs::read_to_string(&csv_path).map_err(|e| {
            Error::data(format!(
                "missing file values.bin and values.csv in {}: {e}",
                dir.display()
            ))
        })?;
        let rows = parse_numeric_csv(&text, "values.csv")?;
        if rows.len() != t {
            return Err(Error::shape(format!(
                "values.csv has {} rows, descriptor expects {t}",
                rows.len()
            )));
        }
        // feature-major per node: column index = node * F + feature
        let mut raw = vec![0.0f32; expected];
        for (ti, row) in rows.iter().enumerate() {
            if row.len() != n * f {
                return Err(Error::shape(format!(
                    "values.csv row {} has {} columns, expected {}",
                    ti + 1,
                    row.len(),
                    n * f
                )));
            }
            for ni in 0..n {
                for fi in 0..f {
                    raw[(ni * t + ti) * f + fi] = row[ni * f + fi] as f32;
                }
            }
        }
        raw
    };

    let values = Array3::from_shape_vec(
        (n, t, f),
        raw.into_iter().map(|v| F::from_f64_lossy(v as f64)).collect(),
    )
    .map_err(|e| Error::shape(format!("values reshape: {e}")))?;

    let adjacency = if meta.has_adjacency {
        let adj_path = dir.join("adj.csv");
        let text = fs::read_to_string(&adj_path)
            .map_err(|e| Error::data(format!("missing file {}: {e}", adj_path.display())))?;
        let rows = parse_numeric_csv(&text, "adj.csv")?;
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape(format!(
                "adjacency shape mismatch: expected {n}x{n}, got {}x{}",
                rows.len(),
                rows.first().map_or(0, |r| r.len())
            )));
        }
        let flat: Vec<F> = rows
            .into_iter()
            .flatten()
            .map(F::from_f64_lossy)
            .collect();
        Some(Array2::from_shape_vec((n, n), flat).unwrap())
    } else {
        None
    };

    CtsDataset::new(values, adjacency, meta.name)
}

/// Write a dataset directory in the `meta.json` + `values.bin` format.
pub fn write_dataset<F: Scalar>(ds: &CtsDataset<F>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let meta = ds.meta();
    fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )?;
    let mut w = BufWriter::new(fs::File::create(dir.join("values.bin"))?);
    for v in ds.values.iter() {
        w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
    }
    w.flush()?;
    if let Some(adj) = &ds.adjacency {
        let mut out = String::new();
        for row in adj.rows() {
            let cells: Vec<String> = row
                .iter()
                .map(|v| format!("{}", v.to_f64_lossy() as f32))
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        fs::write(dir.join("adj.csv"), out)?;
    }
    Ok(())
}
