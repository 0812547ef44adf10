//! JSON documents for fitted models, simulation truth and custom designs.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use flag_core::admm::edges_of;
use flag_core::interpret::loadings_from_l;
use flag_core::linalg::psd_rank;
use flag_core::FlagParams;

use crate::error::CliError;

pub type Rows = Vec<Vec<f64>>;

pub fn to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &Rows, what: &str) -> Result<DMatrix<f64>, CliError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Input(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub n_items: usize,
    pub k_hat: usize,
    pub edges: Vec<(usize, usize)>,
    #[serde(rename = "L")]
    pub l: Rows,
    #[serde(rename = "S")]
    pub s: Rows,
    #[serde(rename = "A")]
    pub a: Rows,
    pub converged: bool,
    pub provenance: BTreeMap<String, Value>,
}

impl ModelFile {
    pub fn from_params(params: &FlagParams, converged: bool, provenance: BTreeMap<String, Value>) -> Result<Self, CliError> {
        let k = psd_rank(params.l());
        let a = loadings_from_l(params.l(), k)?;
        Ok(Self {
            n_items: params.n_items(),
            k_hat: k,
            edges: edges_of(params.s()),
            l: to_rows(params.l()),
            s: to_rows(params.s()),
            a: to_rows(a.matrix()),
            converged,
            provenance,
        })
    }

    pub fn params(&self) -> Result<FlagParams, CliError> {
        let l = from_rows(&self.l, "L")?;
        let s = from_rows(&self.s, "S")?;
        if l.nrows() != self.n_items || s.nrows() != self.n_items {
            return Err(CliError::Input(format!(
                "model declares {} items but L is {}x{} and S is {}x{}",
                self.n_items,
                l.nrows(),
                l.ncols(),
                s.nrows(),
                s.ncols()
            )));
        }
        Ok(FlagParams::new(l, s)?)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read model {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("model {}: {e}", path.display())))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DesignFile {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "S")]
    pub s: Rows,
}

#[derive(Debug, Serialize)]
pub struct TruthFile {
    pub setting: Option<u8>,
    pub seed: u64,
    pub n_subjects: usize,
    pub rank: usize,
    pub edges: Vec<(usize, usize)>,
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "L")]
    pub l: Rows,
    #[serde(rename = "S")]
    pub s: Rows,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}
