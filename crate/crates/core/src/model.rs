//! Model parameters and the pseudo-likelihood.
//!
//! The joint law of a response vector is `f(x) ∝ exp{½ xᵀ M x}` with
//! `M = L + S`. Item `j`'s full conditional is logistic in
//! `m_jj / 2 + Σ_{i≠j} m_ij x_i`, which only involves column `j` of `M`.

use nalgebra::{DMatrix, DVector};
use crate::data::BinaryDataset;
use crate::error::{FlagError, Result};
use crate::linalg::{check_symmetric, sym_eigen_desc};

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Latent part `L` (PSD) and graphical part `S` (symmetric).
#[derive(Debug, Clone, PartialEq)]
pub struct FlagParams {
    l: DMatrix<f64>,
    s: DMatrix<f64>,
}

impl FlagParams {
    pub fn new(l: DMatrix<f64>, s: DMatrix<f64>) -> Result<Self> {
        if l.shape() != s.shape() {
            return Err(FlagError::Dimension(format!(
                "L is {:?} but S is {:?}",
                l.shape(),
                s.shape()
            )));
        }
        check_symmetric(&l)?;
        check_symmetric(&s)?;
        let (values, _) = sym_eigen_desc(&l);
        if let Some(&min) = values.iter().last() {
            let floor = -1e-8 * values[0].max(1.0);
            if min < floor {
                return Err(FlagError::NotPsd { min_eig: min });
            }
        }
        Ok(Self { l, s })
    }

    pub fn zeros(n_items: usize) -> Self {
        Self {
            l: DMatrix::zeros(n_items, n_items),
            s: DMatrix::zeros(n_items, n_items),
        }
    }

    pub fn from_loadings(loadings: &LoadingMatrix, s: DMatrix<f64>) -> Result<Self> {
        Self::new(loadings.to_l(), s)
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn n_items(&self) -> usize {
        self.l.nrows()
    }

    pub fn combined(&self) -> CombinedMatrix {
        CombinedMatrix(&self.l + &self.s)
    }
}

/// `M = L + S`, the only quantity the pseudo-likelihood depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedMatrix(DMatrix<f64>);

impl CombinedMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&m)?;
        Ok(Self(m))
    }

    pub fn zeros(n_items: usize) -> Self {
        Self(DMatrix::zeros(n_items, n_items))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn n_items(&self) -> usize {
        self.0.nrows()
    }
}

/// Item loadings `A` (J×K) with `L = A Aᵀ`. Item intercepts live on the
/// diagonal of `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingMatrix {
    a: DMatrix<f64>,
}

impl LoadingMatrix {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.ncols() > a.nrows() {
            return Err(FlagError::InvalidInput(format!(
                "latent dimension {} exceeds item count {}",
                a.ncols(),
                a.nrows()
            )));
        }
        Ok(Self { a })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn n_items(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.a.ncols()
    }

    pub fn to_l(&self) -> DMatrix<f64> {
        let l = &self.a * self.a.transpose();
        crate::linalg::symmetrize(&l)
    }
}

fn check_binary(x: &[u8], n_items: usize) -> Result<()> {
    if x.len() != n_items {
        return Err(FlagError::Dimension(format!(
            "response vector has {} entries, expected {n_items}",
            x.len()
        )));
    }
    if let Some(pos) = x.iter().position(|&v| v > 1) {
        return Err(FlagError::NonBinary {
            value: x[pos].to_string(),
            position: format!("item {}", pos + 1),
        });
    }
    Ok(())
}

fn check_dims(n_items: usize, data: &BinaryDataset) -> Result<()> {
    if data.n_items() != n_items {
        return Err(FlagError::Dimension(format!(
            "parameters have {n_items} items but data has {}",
            data.n_items()
        )));
    }
    data.require_nonempty()
}

/// Linear predictor of item `j` given the other coordinates of `x`.
#[inline]
pub(crate) fn conditional_logit(m: &DMatrix<f64>, x: &[u8], j: usize) -> f64 {
    let col = m.column(j);
    let mut eta = 0.5 * col[j];
    for (i, &xi) in x.iter().enumerate() {
        if i != j && xi == 1 {
            eta += col[i];
        }
    }
    eta
}

/// `P(X_j = 1 | X_{-j} = x_{-j})` under `M`. `j` is zero-based; `x[j]` is ignored.
pub fn conditional_prob(m: &CombinedMatrix, x: &[u8], j: usize) -> Result<f64> {
    let n = m.n_items();
    check_binary(x, n)?;
    if j >= n {
        return Err(FlagError::IndexOutOfRange { index: j, len: n });
    }
    Ok(logistic(conditional_logit(m.matrix(), x, j)))
}

/// Linear predictors for every (pattern, item) pair: U×J.
fn pattern_logits(m: &DMatrix<f64>, data: &BinaryDataset) -> DMatrix<f64> {
    let p = data.patterns();
    let mut eta = p * m;
    for j in 0..m.ncols() {
        let mjj = m[(j, j)];
        for u in 0..p.nrows() {
            eta[(u, j)] += mjj * (0.5 - p[(u, j)]);
        }
    }
    eta
}

/// Log pseudo-likelihood using column `j` of `m` for item `j`'s conditional.
/// For symmetric `m` this is the usual pseudo-likelihood.
pub(crate) fn log_pl_unchecked(m: &DMatrix<f64>, data: &BinaryDataset) -> f64 {
    let eta = pattern_logits(m, data);
    let p = data.patterns();
    let w = data.pattern_weights();
    let mut total = 0.0;
    for j in 0..eta.ncols() {
        for (u, &wu) in w.iter().enumerate() {
            let e = eta[(u, j)];
            total -= wu * if p[(u, j)] == 1.0 { softplus(-e) } else { softplus(e) };
        }
    }
    total
}

/// `Σ_i Σ_j log P(X_j = x_ij | x_i,-j)`.
pub fn log_pseudo_likelihood(m: &CombinedMatrix, data: &BinaryDataset) -> Result<f64> {
    check_dims(m.n_items(), data)?;
    Ok(log_pl_unchecked(m.matrix(), data))
}

pub fn log_pseudo_likelihood_params(params: &FlagParams, data: &BinaryDataset) -> Result<f64> {
    log_pseudo_likelihood(&params.combined(), data)
}

/// `h_N(M) = -(1/N) log PL(M)`.
pub fn h_n(m: &CombinedMatrix, data: &BinaryDataset) -> Result<f64> {
    check_dims(m.n_items(), data)?;
    Ok(-log_pl_unchecked(m.matrix(), data) / data.n_subjects() as f64)
}

/// Gradient of `h_N` treating every entry of `m` as free, with item `j`'s
/// conditional reading column `j`. Entry `(i, j)` therefore only collects the
/// contribution of conditional `j`.
pub(crate) fn column_gradient(m: &DMatrix<f64>, data: &BinaryDataset) -> DMatrix<f64> {
    log_pl_and_column_gradient(m, data).1
}

/// Log pseudo-likelihood together with [`column_gradient`], sharing one pass.
pub(crate) fn log_pl_and_column_gradient(m: &DMatrix<f64>, data: &BinaryDataset) -> (f64, DMatrix<f64>) {
    let eta = pattern_logits(m, data);
    let p = data.patterns();
    let w = data.pattern_weights();
    let n = data.n_subjects() as f64;
    let mut resid = DMatrix::zeros(eta.nrows(), eta.ncols());
    let mut lpl = 0.0;
    for j in 0..eta.ncols() {
        for (u, &wu) in w.iter().enumerate() {
            let e = eta[(u, j)];
            let x = p[(u, j)];
            lpl -= wu * if x == 1.0 { softplus(-e) } else { softplus(e) };
            resid[(u, j)] = wu * (x - logistic(e));
        }
    }
    let mut g = p.tr_mul(&resid) * (-1.0 / n);
    for j in 0..eta.ncols() {
        let s: f64 = resid.column(j).sum();
        g[(j, j)] = -0.5 * s / n;
    }
    (lpl, g)
}

/// Gradient of `h_N` over symmetric `M`, with `m_ij ≡ m_ji` a single
/// parameter: off-diagonal entries collect both the `i`-th and `j`-th
/// conditionals, diagonal entries carry the ½ from `m_jj / 2`.
pub fn grad_h(m: &CombinedMatrix, data: &BinaryDataset) -> Result<DMatrix<f64>> {
    check_dims(m.n_items(), data)?;
    let g = column_gradient(m.matrix(), data);
    let mut tied = &g + g.transpose();
    for j in 0..g.nrows() {
        tied[(j, j)] = g[(j, j)];
    }
    Ok(tied)
}

/// One item's conditional log-likelihood, as a function of column `j` of `M`,
/// plus a quadratic proximity term. This is the unit of work in the smooth
/// proximal step.
pub(crate) struct ColumnProblem<'a> {
    data: &'a BinaryDataset,
    item: usize,
    target: DVector<f64>,
    inv_lambda: f64,
}

impl<'a> ColumnProblem<'a> {
    pub(crate) fn new(data: &'a BinaryDataset, item: usize, target: DVector<f64>, lambda: f64) -> Self {
        Self {
            data,
            item,
            target,
            inv_lambda: 1.0 / lambda,
        }
    }

    fn logits(&self, w: &DVector<f64>) -> DVector<f64> {
        let p = self.data.patterns();
        let j = self.item;
        let mut eta = p * w;
        for u in 0..p.nrows() {
            eta[u] += w[j] * (0.5 - p[(u, j)]);
        }
        eta
    }

    /// Objective and gradient at `w`.
    pub(crate) fn value_grad(&self, w: &DVector<f64>, grad: &mut DVector<f64>) -> f64 {
        let p = self.data.patterns();
        let weights = self.data.pattern_weights();
        let j = self.item;
        let n = self.data.n_subjects() as f64;
        let eta = self.logits(w);
        let mut resid = DVector::zeros(eta.len());
        let mut nll = 0.0;
        for (u, &wu) in weights.iter().enumerate() {
            let e = eta[u];
            let xj = p[(u, j)];
            nll += wu * if xj == 1.0 { softplus(-e) } else { softplus(e) };
            resid[u] = wu * (xj - logistic(e));
        }
        let mut g = p.tr_mul(&resid);
        g[j] = 0.5 * resid.sum();
        let diff = w - &self.target;
        *grad = g * (-1.0 / n) + &diff * self.inv_lambda;
        nll / n + 0.5 * self.inv_lambda * diff.norm_squared()
    }

    /// Exact Hessian at `w`.
    pub(crate) fn hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let p = self.data.patterns();
        let weights = self.data.pattern_weights();
        let j = self.item;
        let n = self.data.n_subjects() as f64;
        let eta = self.logits(w);
        let mut z = p.clone();
        for (u, &wu) in weights.iter().enumerate() {
            z[(u, j)] = 0.5;
            let pr = logistic(eta[u]);
            let scale = (wu * pr * (1.0 - pr) / n).sqrt();
            z.row_mut(u).scale_mut(scale);
        }
        let mut h = z.tr_mul(&z);
        for k in 0..h.nrows() {
            h[(k, k)] += self.inv_lambda;
        }
        h
    }
}
