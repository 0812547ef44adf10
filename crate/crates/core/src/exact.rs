//! Brute-force enumeration of the joint pmf for small item counts.
//!
//! Outcome `x` is stored at index `Σ_k x_k 2^k`: bit `k` (least significant
//! first) is item `k` in zero-based numbering.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{FlagError, Result};
use crate::linalg::check_symmetric;
use crate::model::FlagParams;

pub const MAX_ENUM_ITEMS: usize = 25;

#[derive(Debug, Clone)]
pub struct ExactPmf {
    n_items: usize,
    probs: Vec<f64>,
    log_normalizer: f64,
}

impl ExactPmf {
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `log Σ_x exp{½ xᵀ M x}`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn index_of(x: &[u8]) -> usize {
        x.iter()
            .enumerate()
            .fold(0usize, |acc, (k, &v)| acc | ((v as usize & 1) << k))
    }

    pub fn state(&self, index: usize) -> Vec<u8> {
        (0..self.n_items).map(|k| ((index >> k) & 1) as u8).collect()
    }

    pub fn prob(&self, x: &[u8]) -> f64 {
        self.probs[Self::index_of(x)]
    }

    /// `P(X_j = 1)` for every item.
    pub fn marginals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_items];
        for (idx, &p) in self.probs.iter().enumerate() {
            for (k, slot) in out.iter_mut().enumerate() {
                if (idx >> k) & 1 == 1 {
                    *slot += p;
                }
            }
        }
        out
    }

    /// `E[X Xᵀ]`.
    pub fn second_moments(&self) -> DMatrix<f64> {
        let n = self.n_items;
        let mut out = DMatrix::zeros(n, n);
        for (idx, &p) in self.probs.iter().enumerate() {
            for j in 0..n {
                if (idx >> j) & 1 == 0 {
                    continue;
                }
                for i in 0..n {
                    if (idx >> i) & 1 == 1 {
                        out[(i, j)] += p;
                    }
                }
            }
        }
        out
    }

    /// One line per outcome: `index,bits,probability`, bits written item 1 first.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,bits,probability")?;
        for (idx, p) in self.probs.iter().enumerate() {
            let bits: String = self
                .state(idx)
                .iter()
                .map(|&b| if b == 1 { '1' } else { '0' })
                .collect();
            writeln!(w, "{idx},{bits},{p:.17e}")?;
        }
        Ok(())
    }
}

/// Log weights `½ xᵀ M x` for all `2^J` outcomes, walking a Gray code so
/// each step costs O(J).
fn log_weights(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let total = 1usize << n;
    let mut out = vec![0.0; total];
    let mut field = vec![0.0; n];
    let mut current = 0.0;
    let mut state = 0usize;
    for step in 1..total {
        let k = step.trailing_zeros() as usize;
        let on = (state >> k) & 1 == 0;
        let delta = 0.5 * m[(k, k)] + field[k];
        let sign = if on { 1.0 } else { -1.0 };
        current += sign * delta;
        state ^= 1 << k;
        for (i, f) in field.iter_mut().enumerate() {
            if i != k {
                *f += sign * m[(i, k)];
            }
        }
        out[state] = current;
    }
    out
}

fn check_cap(n: usize) -> Result<()> {
    if n > MAX_ENUM_ITEMS {
        Err(FlagError::TooLarge {
            items: n,
            cap: MAX_ENUM_ITEMS,
        })
    } else {
        Ok(())
    }
}

/// Enumerates `f(x) ∝ exp{½ xᵀ M x}` for a symmetric `M`.
pub fn enumerate_pmf_matrix(m: &DMatrix<f64>) -> Result<ExactPmf> {
    check_symmetric(m)?;
    check_cap(m.nrows())?;
    let mut weights = log_weights(m);
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for w in weights.iter_mut() {
        *w = (*w - max).exp();
        sum += *w;
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }
    Ok(ExactPmf {
        n_items: m.nrows(),
        probs: weights,
        log_normalizer: max + sum.ln(),
    })
}

/// Marginal pmf of the responses with the latent vector integrated out.
pub fn enumerate_pmf(params: &FlagParams) -> Result<ExactPmf> {
    enumerate_pmf_matrix(params.combined().matrix())
}

/// `log z(S)` with `z(S) = Σ_x exp{½ xᵀ S x}`.
pub fn ising_log_normalizer(s: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(s)?;
    check_cap(s.nrows())?;
    let weights = log_weights(s);
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = weights.iter().map(|w| (w - max).exp()).sum();
    Ok(max + sum.ln())
}

pub fn ising_normalizer(s: &DMatrix<f64>) -> Result<f64> {
    ising_log_normalizer(s).map(f64::exp)
}

/// Ratio of enumerated joint probabilities: `P(x with x_j=1) / (P(x_j=0) + P(x_j=1))`.
pub fn exact_conditional(params: &FlagParams, x: &[u8], j: usize) -> Result<f64> {
    let pmf = enumerate_pmf(params)?;
    exact_conditional_from(&pmf, x, j)
}

pub fn exact_conditional_from(pmf: &ExactPmf, x: &[u8], j: usize) -> Result<f64> {
    let n = pmf.n_items();
    if x.len() != n {
        return Err(FlagError::Dimension(format!(
            "response vector has {} entries, expected {n}",
            x.len()
        )));
    }
    if j >= n {
        return Err(FlagError::IndexOutOfRange { index: j, len: n });
    }
    if x.iter().any(|&v| v > 1) {
        return Err(FlagError::NonBinary {
            value: format!("{x:?}"),
            position: "response vector".into(),
        });
    }
    let base = ExactPmf::index_of(x) & !(1usize << j);
    let p0 = pmf.probs[base];
    let p1 = pmf.probs[base | (1 << j)];
    Ok(p1 / (p0 + p1))
}
