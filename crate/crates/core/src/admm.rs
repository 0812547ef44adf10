//! ADMM for the penalized pseudo-likelihood
//!
//! ```text
//! minimize  h_N(M) + γ‖O(S)‖₁ + δ‖L‖_*   subject to  L ⪰ 0, S = Sᵀ, M = Mᵀ = L + S
//! ```
//!
//! The variables are split into an x-block `(M, L, S)` carrying the objective
//! and a z-block `(M̃, L̃, S̃)` carrying the linear constraints, with scaled
//! duals `(U_M, U_L, U_S)`. Each iteration applies the three proximal maps to
//! the x-block, projects onto the constraint set, then updates the duals.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::BinaryDataset;
use crate::error::{FlagError, Result};
use crate::linalg::{check_symmetric, compose_spectral, nuclear_norm_sym, off_diag_l1, psd_rank, sym_eigen_desc, symmetrize};
use crate::model::{log_pl_unchecked, ColumnProblem};
use crate::optim::{self, BfgsOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Scale of the proximal quadratic terms.
    pub lambda: f64,
    pub max_iter: usize,
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// Gradient sup-norm tolerance for each column subproblem.
    pub subproblem_grad_tol: f64,
    pub subproblem_max_iter: usize,
    /// Evaluate the penalized objective at the z-block every iteration.
    pub track_objective: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 50.0,
            max_iter: 5000,
            tol_abs: 1e-6,
            tol_rel: 1e-5,
            subproblem_grad_tol: 1e-8,
            subproblem_max_iter: 200,
            track_objective: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lambda, self.tol_abs, self.tol_rel, self.subproblem_grad_tol]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.max_iter == 0 || self.subproblem_max_iter == 0 {
            return Err(FlagError::InvalidInput(
                "solver settings must all be positive".into(),
            ));
        }
        if self.tol_abs > 1e-2 {
            return Err(FlagError::InvalidInput(format!(
                "tol_abs = {} exceeds 1e-2",
                self.tol_abs
            )));
        }
        Ok(())
    }
}

/// Full ADMM iterate: x-block, z-block and scaled duals.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub m: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub m_z: DMatrix<f64>,
    pub l_z: DMatrix<f64>,
    pub s_z: DMatrix<f64>,
    pub u_m: DMatrix<f64>,
    pub u_l: DMatrix<f64>,
    pub u_s: DMatrix<f64>,
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

impl SolverState {
    pub fn zeros(n_items: usize) -> Self {
        let z = DMatrix::zeros(n_items, n_items);
        Self {
            m: z.clone(),
            l: z.clone(),
            s: z.clone(),
            m_z: z.clone(),
            l_z: z.clone(),
            s_z: z.clone(),
            u_m: z.clone(),
            u_l: z.clone(),
            u_s: z,
            iteration: 0,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
        }
    }

    pub fn n_items(&self) -> usize {
        self.m.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedFit {
    pub l: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub gamma: f64,
    pub delta: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Penalized objective at `(l, s)`.
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    /// Penalized objective at the z-block; NaN unless tracking is enabled.
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmOutput {
    pub fit: RegularizedFit,
    pub state: SolverState,
    pub trace: Vec<TraceRow>,
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], mut w: W) -> Result<()> {
    writeln!(w, "iteration,objective,primal_residual,dual_residual")?;
    for row in trace {
        writeln!(
            w,
            "{},{},{},{}",
            row.iteration, row.objective, row.primal_residual, row.dual_residual
        )?;
    }
    Ok(())
}

/// Result of the smooth proximal step.
#[derive(Debug, Clone)]
pub struct SmoothProx {
    pub m: DMatrix<f64>,
    pub converged: bool,
    /// Largest final gradient sup-norm over the column subproblems.
    pub max_grad_norm: f64,
}

/// Per-column inverse-Hessian approximations carried across ADMM iterations.
struct ColumnCache {
    inv_hessian: Vec<Option<DMatrix<f64>>>,
    stale: Vec<usize>,
}

const HESSIAN_REFRESH: usize = 25;

impl ColumnCache {
    fn new(n: usize) -> Self {
        Self {
            inv_hessian: vec![None; n],
            stale: vec![0; n],
        }
    }
}

/// `argmin_M h_N(M) + (1/2λ)‖M − target‖²_F`, one column at a time.
pub fn prox_smooth_m(
    target: &DMatrix<f64>,
    data: &BinaryDataset,
    lambda: f64,
    grad_tol: f64,
    max_iter: usize,
) -> Result<SmoothProx> {
    let n = data.n_items();
    if target.shape() != (n, n) {
        return Err(FlagError::Dimension(format!(
            "target is {:?}, data has {n} items",
            target.shape()
        )));
    }
    data.require_nonempty()?;
    if !(lambda > 0.0) {
        return Err(FlagError::InvalidInput("lambda must be positive".into()));
    }
    let mut cache = ColumnCache::new(n);
    Ok(smooth_step(target, target, data, lambda, grad_tol, max_iter, &mut cache))
}

fn smooth_step(
    target: &DMatrix<f64>,
    warm: &DMatrix<f64>,
    data: &BinaryDataset,
    lambda: f64,
    grad_tol: f64,
    max_iter: usize,
    cache: &mut ColumnCache,
) -> SmoothProx {
    let n = data.n_items();
    let opts = BfgsOptions { grad_tol, max_iter };
    let results: Vec<_> = (0..n)
        .into_par_iter()
        .zip(cache.inv_hessian.par_iter_mut().zip(cache.stale.par_iter_mut()))
        .map(|(j, (inv_h, stale))| {
            let problem = ColumnProblem::new(data, j, target.column(j).into_owned(), lambda);
            let x0: DVector<f64> = warm.column(j).into_owned();
            if inv_h.is_none() || *stale >= HESSIAN_REFRESH {
                *inv_h = problem.hessian(&x0).try_inverse();
                *stale = 0;
            }
            let res = optim::minimize(|w, g| problem.value_grad(w, g), x0, inv_h.clone(), opts);
            *stale += if res.iterations > 3 { HESSIAN_REFRESH } else { 1 };
            res
        })
        .collect();

    let mut m = DMatrix::zeros(n, n);
    let mut converged = true;
    let mut max_grad_norm = 0.0f64;
    for (j, res) in results.into_iter().enumerate() {
        m.set_column(j, &res.x);
        converged &= res.converged;
        max_grad_norm = max_grad_norm.max(res.grad_norm);
    }
    SmoothProx {
        m,
        converged,
        max_grad_norm,
    }
}

/// Eigenvalue thresholding: `T diag((Λ − threshold)₊) Tᵀ`, the proximal map
/// of `threshold·‖L‖_*` over the PSD cone.
pub fn prox_nuclear_psd(target: &DMatrix<f64>, threshold: f64) -> Result<DMatrix<f64>> {
    check_symmetric(target)?;
    Ok(eigen_threshold(target, threshold))
}

fn eigen_threshold(target: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen_desc(target);
    let shrunk = values.map(|v| (v - threshold).max(0.0));
    compose_spectral(&shrunk, &vectors)
}

/// Soft-thresholds the off-diagonal entries; the diagonal passes through.
pub fn prox_l1_offdiag(target: &DMatrix<f64>, threshold: f64) -> Result<DMatrix<f64>> {
    check_symmetric(target)?;
    Ok(soft_threshold_offdiag(&symmetrize(target), threshold))
}

#[inline]
pub fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}

fn soft_threshold_offdiag(target: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    let mut out = target.clone();
    let n = out.nrows();
    for j in 0..n {
        for i in 0..n {
            if i != j {
                out[(i, j)] = soft_threshold(target[(i, j)], threshold);
            }
        }
    }
    out
}

/// Euclidean projection of `(M̄, L̄, S̄)` onto `{M = Mᵀ, M = L + S}`.
///
/// For symmetric `L̄` and `S̄` this is
/// `M̃ = (M̄ + M̄ᵀ + L̄ + S̄)/3`,
/// `L̃ = 2L̄/3 + (M̄ + M̄ᵀ)/6 − S̄/3`,
/// `S̃ = 2S̄/3 + (M̄ + M̄ᵀ)/6 − L̄/3`;
/// any antisymmetric part of `L̄ + S̄` is split evenly and removed.
pub fn project_consistency(
    bar_m: &DMatrix<f64>,
    bar_l: &DMatrix<f64>,
    bar_s: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let sym_m = symmetrize(bar_m);
    let sym_l = symmetrize(bar_l);
    let sym_s = symmetrize(bar_s);
    let sum = bar_l + bar_s;
    let anti_half = (&sum - sum.transpose()) * 0.25;
    let shift = (&sym_m - &sym_l - &sym_s) / 3.0;
    let m = symmetrize(&((&sym_m * 2.0 + &sym_l + &sym_s) / 3.0));
    let l = bar_l + &shift - &anti_half;
    let s = &m - &l;
    (m, l, s)
}

/// Penalized objective `h_N(L+S) + γ‖O(S)‖₁ + δ‖L‖_*`.
pub fn penalized_objective(
    l: &DMatrix<f64>,
    s: &DMatrix<f64>,
    data: &BinaryDataset,
    gamma: f64,
    delta: f64,
) -> f64 {
    let m = l + s;
    let h = -log_pl_unchecked(&m, data) / data.n_subjects() as f64;
    h + gamma * off_diag_l1(s) + delta * nuclear_norm_sym(l)
}

fn frob2(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Runs ADMM from `warm_start` (or all zeros) until both residuals fall
/// below `tol_abs·√(3J²) + tol_rel·max(‖x‖_F, ‖z‖_F)` or `max_iter` is hit.
pub fn admm_fit(
    data: &BinaryDataset,
    gamma: f64,
    delta: f64,
    config: &SolverConfig,
    warm_start: Option<&SolverState>,
) -> Result<AdmmOutput> {
    config.validate()?;
    data.require_nonempty()?;
    if !(gamma >= 0.0 && delta >= 0.0) || !gamma.is_finite() || !delta.is_finite() {
        return Err(FlagError::InvalidInput(format!(
            "penalties must be non-negative, got gamma={gamma}, delta={delta}"
        )));
    }
    let n = data.n_items();
    let mut st = match warm_start {
        Some(w) if w.n_items() == n => w.clone(),
        Some(w) => {
            return Err(FlagError::Dimension(format!(
                "warm start has {} items, data has {n}",
                w.n_items()
            )))
        }
        None => SolverState::zeros(n),
    };
    st.iteration = 0;

    let lambda = config.lambda;
    let eps_abs = config.tol_abs * (3.0 * (n * n) as f64).sqrt();
    let mut cache = ColumnCache::new(n);
    let mut trace = Vec::new();
    let mut converged = false;

    for iter in 1..=config.max_iter {
        // Step 1: proximal maps on the x-block.
        let target_m = &st.m_z - &st.u_m;
        let smooth = smooth_step(
            &target_m,
            &st.m,
            data,
            lambda,
            config.subproblem_grad_tol,
            config.subproblem_max_iter,
            &mut cache,
        );
        st.m = smooth.m;
        st.l = eigen_threshold(&symmetrize(&(&st.l_z - &st.u_l)), lambda * delta);
        st.s = soft_threshold_offdiag(&symmetrize(&(&st.s_z - &st.u_s)), lambda * gamma);

        // Step 2: projection onto the consistency constraints.
        let (m_z, l_z, s_z) = project_consistency(&(&st.m + &st.u_m), &(&st.l + &st.u_l), &(&st.s + &st.u_s));
        let dual2 = frob2(&m_z, &st.m_z) + frob2(&l_z, &st.l_z) + frob2(&s_z, &st.s_z);
        st.m_z = m_z;
        st.l_z = l_z;
        st.s_z = s_z;

        // Step 3: scaled dual ascent.
        st.u_m += &st.m - &st.m_z;
        st.u_l += &st.l - &st.l_z;
        st.u_s += &st.s - &st.s_z;

        let primal = (frob2(&st.m, &st.m_z) + frob2(&st.l, &st.l_z) + frob2(&st.s, &st.s_z)).sqrt();
        let dual = dual2.sqrt() / lambda;
        st.iteration = iter;
        st.primal_residual = primal;
        st.dual_residual = dual;

        let x_norm = (st.m.norm_squared() + st.l.norm_squared() + st.s.norm_squared()).sqrt();
        let z_norm = (st.m_z.norm_squared() + st.l_z.norm_squared() + st.s_z.norm_squared()).sqrt();
        let eps = eps_abs + config.tol_rel * x_norm.max(z_norm);

        let objective = if config.track_objective {
            penalized_objective(&st.l_z, &st.s_z, data, gamma, delta)
        } else {
            f64::NAN
        };
        trace.push(TraceRow {
            iteration: iter,
            objective,
            primal_residual: primal,
            dual_residual: dual,
        });

        if primal <= eps && dual <= eps {
            converged = true;
            break;
        }
    }

    let objective = penalized_objective(&st.l, &st.s, data, gamma, delta);
    let fit = RegularizedFit {
        l: st.l.clone(),
        s: st.s.clone(),
        gamma,
        delta,
        converged,
        iterations: st.iteration,
        objective,
        primal_residual: st.primal_residual,
        dual_residual: st.dual_residual,
    };
    Ok(AdmmOutput { fit, state: st, trace })
}

/// Rank of `L̂` and edge set of `Ŝ` (zero-based pairs `i < j`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Structure {
    pub rank: usize,
    pub edges: Vec<(usize, usize)>,
}

pub fn edges_of(s: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = s.nrows();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if s[(i, j)] != 0.0 || s[(j, i)] != 0.0 {
                edges.push((i, j));
            }
        }
    }
    edges
}

pub fn extract_structure(fit: &RegularizedFit) -> Structure {
    Structure {
        rank: psd_rank(&fit.l),
        edges: edges_of(&fit.s),
    }
}
