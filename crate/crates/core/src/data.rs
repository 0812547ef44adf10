//! Binary response matrices and their cached sufficient statistics.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{FlagError, Result};

/// An N×J matrix of {0,1} responses.
///
/// Identical response rows are collapsed into weighted patterns at
/// construction, and the Gram matrix `XᵀX` plus column sums are cached, so the
/// likelihood code never rescans the raw rows.
#[derive(Debug, Clone)]
pub struct BinaryDataset {
    n_items: usize,
    rows: Vec<u8>,
    patterns: DMatrix<f64>,
    weights: Vec<f64>,
    gram: DMatrix<f64>,
    col_sums: Vec<f64>,
}

impl PartialEq for BinaryDataset {
    fn eq(&self, other: &Self) -> bool {
        self.n_items == other.n_items && self.rows == other.rows
    }
}

impl BinaryDataset {
    /// Builds a dataset from row-major responses. An empty dataset (zero rows)
    /// is allowed; likelihood evaluations on it fail with `EmptyDataset`.
    pub fn new(n_items: usize, rows: Vec<u8>) -> Result<Self> {
        if n_items < 2 {
            return Err(FlagError::InvalidInput(format!(
                "at least 2 items are required, got {n_items}"
            )));
        }
        if rows.len() % n_items != 0 {
            return Err(FlagError::Dimension(format!(
                "{} responses do not fill rows of {n_items} items",
                rows.len()
            )));
        }
        if let Some(pos) = rows.iter().position(|&v| v > 1) {
            return Err(FlagError::NonBinary {
                value: rows[pos].to_string(),
                position: format!("row {}, item {}", pos / n_items + 1, pos % n_items + 1),
            });
        }

        let mut counts: BTreeMap<&[u8], usize> = BTreeMap::new();
        for row in rows.chunks_exact(n_items) {
            *counts.entry(row).or_insert(0) += 1;
        }
        let mut patterns = DMatrix::zeros(counts.len(), n_items);
        let mut weights = Vec::with_capacity(counts.len());
        for (u, (row, count)) in counts.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                patterns[(u, j)] = v as f64;
            }
            weights.push(*count as f64);
        }

        let mut gram = DMatrix::zeros(n_items, n_items);
        let mut col_sums = vec![0.0; n_items];
        for (u, &w) in weights.iter().enumerate() {
            for j in 0..n_items {
                if patterns[(u, j)] == 0.0 {
                    continue;
                }
                col_sums[j] += w;
                for i in 0..n_items {
                    gram[(i, j)] += w * patterns[(u, i)];
                }
            }
        }

        Ok(Self {
            n_items,
            rows,
            patterns,
            weights,
            gram,
            col_sums,
        })
    }

    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let n_items = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut flat = Vec::with_capacity(rows.len() * n_items);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n_items {
                return Err(FlagError::Dimension(format!(
                    "row {} has {} items, expected {n_items}",
                    i + 1,
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        Self::new(n_items, flat)
    }

    pub fn n_subjects(&self) -> usize {
        self.rows.len() / self.n_items
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.rows[i * self.n_items..(i + 1) * self.n_items]
    }

    pub fn responses(&self) -> &[u8] {
        &self.rows
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.rows.chunks_exact(self.n_items)
    }

    /// Distinct response patterns (U×J), sorted lexicographically.
    pub fn patterns(&self) -> &DMatrix<f64> {
        &self.patterns
    }

    /// Multiplicity of each row of [`Self::patterns`].
    pub fn pattern_weights(&self) -> &[f64] {
        &self.weights
    }

    /// `XᵀX`, i.e. co-endorsement counts.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn col_sums(&self) -> &[f64] {
        &self.col_sums
    }

    pub fn item_means(&self) -> Vec<f64> {
        let n = self.n_subjects().max(1) as f64;
        self.col_sums.iter().map(|s| s / n).collect()
    }

    pub(crate) fn require_nonempty(&self) -> Result<()> {
        if self.n_subjects() == 0 {
            Err(FlagError::EmptyDataset)
        } else {
            Ok(())
        }
    }

    /// Parses comma-separated rows of "0"/"1" fields. A first row that does
    /// not parse as binary data is treated as a header and skipped.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut flat = Vec::new();
        let mut n_items: Option<usize> = None;
        let mut first_content = true;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            let is_first = first_content;
            first_content = false;
            if is_first && fields.iter().any(|f| f.parse::<f64>().is_err()) {
                continue;
            }
            match n_items {
                None => n_items = Some(fields.len()),
                Some(j) if j != fields.len() => {
                    return Err(FlagError::Parse {
                        line: line_no,
                        msg: format!("expected {j} fields, found {}", fields.len()),
                    })
                }
                _ => {}
            }
            for (k, f) in fields.iter().enumerate() {
                let v = match *f {
                    "0" => 0u8,
                    "1" => 1u8,
                    other => {
                        return Err(FlagError::Parse {
                            line: line_no,
                            msg: format!("field {} is {other:?}, expected 0 or 1", k + 1),
                        })
                    }
                };
                flat.push(v);
            }
        }
        let n_items = n_items.ok_or_else(|| FlagError::InvalidInput("no data rows found".into()))?;
        Self::new(n_items, flat)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    /// Writes one row per subject, no header.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        let mut line = String::with_capacity(2 * self.n_items);
        for row in self.rows() {
            line.clear();
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                line.push(if *v == 1 { '1' } else { '0' });
            }
            line.push('\n');
            writer.write_all(line.as_bytes())?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
