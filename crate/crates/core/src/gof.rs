//! Parametric-bootstrap goodness of fit with the unnormalized joint
//! log-likelihood `½ Σ_i x_iᵀ M x_i` as the test statistic.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::BinaryDataset;
use crate::error::{FlagError, Result};
use crate::model::{CombinedMatrix, FlagParams};
use crate::sim::{gibbs_sample_stream, GibbsConfig};

pub fn unnormalized_loglik(m: &CombinedMatrix, data: &BinaryDataset) -> Result<f64> {
    unnormalized_loglik_matrix(m.matrix(), data)
}

fn unnormalized_loglik_matrix(m: &DMatrix<f64>, data: &BinaryDataset) -> Result<f64> {
    if m.nrows() != data.n_items() {
        return Err(FlagError::Dimension(format!(
            "matrix has {} items, data has {}",
            m.nrows(),
            data.n_items()
        )));
    }
    // Σ_i x_iᵀ M x_i = ⟨M, XᵀX⟩.
    Ok(0.5 * m.component_mul(data.gram()).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GofReport {
    pub stat_observed: f64,
    pub stats_bootstrap: Vec<f64>,
    pub p_lower: f64,
    pub p_upper: f64,
    pub p_two_sided: f64,
}

impl GofReport {
    pub fn n_boot(&self) -> usize {
        self.stats_bootstrap.len()
    }

    /// Add-one Monte Carlo p-values from an observed statistic and its
    /// bootstrap replicates.
    pub fn from_stats(stat_observed: f64, stats_bootstrap: Vec<f64>) -> Result<Self> {
        if stats_bootstrap.is_empty() {
            return Err(FlagError::InvalidInput("need at least one bootstrap replicate".into()));
        }
        let b = stats_bootstrap.len() as f64;
        let below = stats_bootstrap.iter().filter(|&&s| s <= stat_observed).count() as f64;
        let above = stats_bootstrap.iter().filter(|&&s| s >= stat_observed).count() as f64;
        let p_lower = (1.0 + below) / (b + 1.0);
        let p_upper = (1.0 + above) / (b + 1.0);
        Ok(Self {
            stat_observed,
            stats_bootstrap,
            p_lower,
            p_upper,
            p_two_sided: (2.0 * p_lower.min(p_upper)).min(1.0),
        })
    }

    /// `replicate,statistic` rows.
    pub fn write_bootstrap_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "replicate,statistic")?;
        for (b, s) in self.stats_bootstrap.iter().enumerate() {
            writeln!(w, "{b},{s}")?;
        }
        Ok(())
    }
}

/// Draws `n_boot` datasets of the observed size from `params` by Gibbs
/// sampling (replicate `b` on RNG stream `b + 1` of `gibbs.seed`) and compares
/// their statistics with the observed one. The same `M` scores every dataset.
pub fn parametric_bootstrap_gof(
    data: &BinaryDataset,
    params: &FlagParams,
    n_boot: usize,
    gibbs: &GibbsConfig,
) -> Result<GofReport> {
    if n_boot == 0 {
        return Err(FlagError::InvalidInput("need at least one bootstrap replicate".into()));
    }
    data.require_nonempty()?;
    let m = params.combined().into_inner();
    let observed = unnormalized_loglik_matrix(&m, data)?;
    let n = data.n_subjects();
    let stats = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let boot = gibbs_sample_stream(params, n, gibbs, b as u64 + 1)?;
            unnormalized_loglik_matrix(&m, &boot)
        })
        .collect::<Result<Vec<f64>>>()?;
    GofReport::from_stats(observed, stats)
}
