//! Tuning-parameter selection by pseudo-likelihood BIC.
//!
//! Every `(γ, δ = ργ)` grid point is fitted by ADMM, its rank and edge set are
//! read off, and the pseudo-likelihood is re-maximized over the submodel with
//! that rank bound and edge support. The grid point whose refit has the
//! smallest BIC is selected.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::admm::{admm_fit, edges_of, extract_structure, RegularizedFit, SolverConfig, Structure};
use crate::data::BinaryDataset;
use crate::error::{FlagError, Result};
use crate::interpret::loadings_from_l;
use crate::linalg::{psd_rank, symmetrize};
use crate::model::{log_pl_and_column_gradient, FlagParams, LoadingMatrix};
use crate::optim::{self, BfgsOptions};

/// `(JK − (K−1)K/2) + |edges| + J`; the last term counts the unpenalized
/// diagonal of `S`.
pub fn count_free_params(n_items: usize, k: usize, edges: &[(usize, usize)]) -> Result<usize> {
    if k > n_items {
        return Err(FlagError::InvalidInput(format!(
            "rank {k} exceeds {n_items} items"
        )));
    }
    let latent = n_items * k - (k * k.saturating_sub(1)) / 2;
    Ok(latent + edges.len() + n_items)
}

/// `−2 log PL + |M| ln N`.
pub fn bic_of_entry(log_pl: f64, free_params: usize, n_subjects: usize) -> f64 {
    -2.0 * log_pl + free_params as f64 * (n_subjects as f64).ln()
}

#[derive(Debug, Clone, Copy)]
pub struct RefitOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for RefitOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-7,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Refit {
    pub params: FlagParams,
    pub loadings: LoadingMatrix,
    pub log_pl: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn check_edges(n: usize, edges: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(edges.len());
    for &(a, b) in edges {
        if a >= n || b >= n || a == b {
            return Err(FlagError::InvalidInput(format!(
                "edge ({a}, {b}) is not a pair of distinct items below {n}"
            )));
        }
        out.push((a.min(b), a.max(b)));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Maximizes the pseudo-likelihood over `L = AAᵀ` with `A` of width `k` and
/// `S` supported on the diagonal plus `edges`, starting from `init`.
pub fn refit_constrained(
    data: &BinaryDataset,
    k: usize,
    edges: &[(usize, usize)],
    init: &FlagParams,
) -> Result<Refit> {
    refit_constrained_with(data, k, edges, init, RefitOptions::default())
}

pub fn refit_constrained_with(
    data: &BinaryDataset,
    k: usize,
    edges: &[(usize, usize)],
    init: &FlagParams,
    opts: RefitOptions,
) -> Result<Refit> {
    let n = data.n_items();
    data.require_nonempty()?;
    if init.n_items() != n {
        return Err(FlagError::Dimension(format!(
            "initial values have {} items, data has {n}",
            init.n_items()
        )));
    }
    if k > n {
        return Err(FlagError::InvalidInput(format!("rank {k} exceeds {n} items")));
    }
    let edges = check_edges(n, edges)?;
    let init_rank = psd_rank(init.l());
    if init_rank > k {
        return Err(FlagError::InvalidInput(format!(
            "initial L has rank {init_rank}, above the submodel bound {k}"
        )));
    }
    for (a, b) in edges_of(init.s()) {
        if edges.binary_search(&(a, b)).is_err() {
            return Err(FlagError::InvalidInput(format!(
                "initial S has a nonzero at ({a}, {b}) outside the edge set"
            )));
        }
    }

    let a0 = loadings_from_l(init.l(), k)?;
    let n_a = n * k;
    let dim = n_a + n + edges.len();
    let mut x0 = DVector::zeros(dim);
    x0.rows_mut(0, n_a).copy_from_slice(a0.matrix().as_slice());
    for j in 0..n {
        x0[n_a + j] = init.s()[(j, j)];
    }
    for (e, &(a, b)) in edges.iter().enumerate() {
        x0[n_a + n + e] = init.s()[(a, b)];
    }

    let unpack = |x: &DVector<f64>| -> (DMatrix<f64>, DMatrix<f64>) {
        let a = DMatrix::from_column_slice(n, k, &x.as_slice()[..n_a]);
        let mut s = DMatrix::zeros(n, n);
        for j in 0..n {
            s[(j, j)] = x[n_a + j];
        }
        for (e, &(p, q)) in edges.iter().enumerate() {
            s[(p, q)] = x[n_a + n + e];
            s[(q, p)] = x[n_a + n + e];
        }
        (a, s)
    };

    let n_subj = data.n_subjects() as f64;
    let objective = |x: &DVector<f64>, grad: &mut DVector<f64>| -> f64 {
        let (a, s) = unpack(x);
        let m = &a * a.transpose() + &s;
        let (lpl, g) = log_pl_and_column_gradient(&m, data);
        let gs = symmetrize(&g);
        let ga = &gs * &a * 2.0;
        grad.rows_mut(0, n_a).copy_from_slice(ga.as_slice());
        for j in 0..n {
            grad[n_a + j] = g[(j, j)];
        }
        for (e, &(p, q)) in edges.iter().enumerate() {
            grad[n_a + n + e] = g[(p, q)] + g[(q, p)];
        }
        -lpl / n_subj
    };

    let res = optim::minimize(
        objective,
        x0,
        None,
        BfgsOptions {
            grad_tol: opts.grad_tol,
            max_iter: opts.max_iter,
        },
    );
    let (a, s) = unpack(&res.x);
    let loadings = LoadingMatrix::new(a)?;
    let params = FlagParams::new(loadings.to_l(), s)?;
    Ok(Refit {
        params,
        loadings,
        log_pl: -res.value * n_subj,
        converged: res.converged,
        iterations: res.iterations,
    })
}

/// Pure item-response baseline: rank-`k` `L`, diagonal `S`. Started from the
/// top eigenvectors of the centred co-endorsement matrix.
pub fn fit_irt_baseline(data: &BinaryDataset, k: usize) -> Result<Refit> {
    data.require_nonempty()?;
    let n = data.n_items();
    if k == 0 || k > n {
        return Err(FlagError::InvalidInput(format!(
            "baseline rank must be between 1 and {n}, got {k}"
        )));
    }
    let init = irt_start(data, k)?;
    refit_constrained(data, k, &[], &init)
}

fn irt_start(data: &BinaryDataset, k: usize) -> Result<FlagParams> {
    let n = data.n_items();
    let nn = data.n_subjects() as f64;
    let means = data.item_means();
    let mut cov = data.gram() / nn;
    for i in 0..n {
        for j in 0..n {
            cov[(i, j)] -= means[i] * means[j];
        }
    }
    // Logistic scale: a covariance of c between items corresponds to an
    // interaction of roughly 4c / (p(1-p)) ≈ 16c around p = ½.
    let (vals, vecs) = crate::linalg::sym_eigen_desc(&cov);
    let mut l = DMatrix::zeros(n, n);
    for c in 0..k {
        let v = vecs.column(c);
        let w = (4.0 * vals[c].max(1e-3)).min(4.0);
        l += v * v.transpose() * w;
    }
    let l = symmetrize(&l);
    let mut s = DMatrix::zeros(n, n);
    for j in 0..n {
        let p = means[j].clamp(0.5 / nn, 1.0 - 0.5 / nn);
        let row_shift: f64 = (0..n).filter(|&i| i != j).map(|i| l[(i, j)] * means[i]).sum();
        s[(j, j)] = 2.0 * ((p / (1.0 - p)).ln() - row_shift) - l[(j, j)];
    }
    FlagParams::new(l, s)
}

/// Independence model in closed form: `s_jj / 2 = logit(p̂_j)`.
pub fn independence_log_pl(data: &BinaryDataset) -> f64 {
    let n = data.n_subjects() as f64;
    data.col_sums()
        .iter()
        .map(|&c| {
            let p = c / n;
            let mut v = 0.0;
            if c > 0.0 {
                v += c * p.ln();
            }
            if c < n {
                v += (n - c) * (1.0 - p).ln();
            }
            v
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct PathEntry {
    pub gamma: f64,
    pub delta: f64,
    pub rho: f64,
    pub fit: RegularizedFit,
    pub structure: Structure,
    pub refit: Option<FlagParams>,
    pub refit_converged: bool,
    pub log_pl_refit: f64,
    pub free_params: usize,
    pub bic: f64,
    /// Why this entry is excluded from selection, if it is.
    pub failure: Option<String>,
}

impl PathEntry {
    pub fn k_hat(&self) -> usize {
        self.structure.rank
    }

    pub fn n_edges(&self) -> usize {
        self.structure.edges.len()
    }

    pub fn is_selectable(&self) -> bool {
        self.failure.is_none() && self.bic.is_finite()
    }
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub path: Vec<PathEntry>,
    pub best_index: usize,
    pub final_params: FlagParams,
}

impl SelectionResult {
    pub fn best(&self) -> &PathEntry {
        &self.path[self.best_index]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelectOptions {
    pub solver: SolverConfig,
    pub refit: RefitOptions,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            refit: RefitOptions::default(),
        }
    }
}

/// `n` evenly spaced points in `(lo, hi]`: `lo + (hi − lo)·k/n`, `k = 1..n`.
pub fn half_open_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
}

/// Default data-analysis grids: 20 values of γ in (0, 0.02] and 20 values of
/// ρ in (10, 20].
pub fn default_grids() -> (Vec<f64>, Vec<f64>) {
    (half_open_grid(0.0, 0.02, 20), half_open_grid(10.0, 20.0, 20))
}

pub fn grid_search_select(
    data: &BinaryDataset,
    gamma_grid: &[f64],
    rho_grid: &[f64],
    config: &SolverConfig,
) -> Result<SelectionResult> {
    grid_search_select_with(
        data,
        gamma_grid,
        rho_grid,
        &SelectOptions {
            solver: *config,
            ..SelectOptions::default()
        },
    )
}

/// Path order is ρ-major: all γ values (ascending) for the first ρ, then the
/// next ρ. Fits along each ρ row are warm-started from the previous γ.
/// Grid points that share a structure share one refit, started from the
/// first such point in path order.
pub fn grid_search_select_with(
    data: &BinaryDataset,
    gamma_grid: &[f64],
    rho_grid: &[f64],
    opts: &SelectOptions,
) -> Result<SelectionResult> {
    data.require_nonempty()?;
    if gamma_grid.is_empty() || rho_grid.is_empty() {
        return Err(FlagError::InvalidInput("tuning grids must be non-empty".into()));
    }
    if gamma_grid.iter().chain(rho_grid).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(FlagError::InvalidInput("tuning grids must be positive".into()));
    }
    opts.solver.validate()?;
    let mut gammas = gamma_grid.to_vec();
    gammas.sort_by(|a, b| a.partial_cmp(b).expect("finite"));

    let rows: Vec<Vec<(f64, f64, std::result::Result<RegularizedFit, String>)>> = rho_grid
        .par_iter()
        .map(|&rho| {
            let mut warm = None;
            let mut row = Vec::with_capacity(gammas.len());
            for &gamma in &gammas {
                match admm_fit(data, gamma, rho * gamma, &opts.solver, warm.as_ref()) {
                    Ok(out) => {
                        warm = Some(out.state);
                        row.push((gamma, rho, Ok(out.fit)));
                    }
                    Err(e) => row.push((gamma, rho, Err(e.to_string()))),
                }
            }
            row
        })
        .collect();

    let mut path = Vec::with_capacity(gammas.len() * rho_grid.len());
    let mut first_with: HashMap<Structure, usize> = HashMap::new();
    let mut jobs: Vec<(Structure, usize)> = Vec::new();
    for (gamma, rho, fit) in rows.into_iter().flatten() {
        let idx = path.len();
        let n = data.n_items();
        let (fit, structure, failure) = match fit {
            Ok(fit) => {
                let structure = extract_structure(&fit);
                let failure = (!fit.converged).then(|| format!("ADMM did not converge in {} iterations", fit.iterations));
                (fit, structure, failure)
            }
            Err(msg) => (
                RegularizedFit {
                    l: DMatrix::zeros(n, n),
                    s: DMatrix::zeros(n, n),
                    gamma,
                    delta: rho * gamma,
                    converged: false,
                    iterations: 0,
                    objective: f64::NAN,
                    primal_residual: f64::NAN,
                    dual_residual: f64::NAN,
                },
                Structure { rank: 0, edges: vec![] },
                Some(msg),
            ),
        };
        if failure.is_none() && !first_with.contains_key(&structure) {
            first_with.insert(structure.clone(), idx);
            jobs.push((structure.clone(), idx));
        }
        path.push(PathEntry {
            gamma,
            delta: rho * gamma,
            rho,
            fit,
            structure,
            refit: None,
            refit_converged: false,
            log_pl_refit: f64::NAN,
            free_params: 0,
            bic: f64::NAN,
            failure,
        });
    }

    let refits: Vec<(Structure, std::result::Result<Refit, String>)> = jobs
        .par_iter()
        .map(|(structure, idx)| {
            let fit = &path[*idx].fit;
            let init = FlagParams::new(fit.l.clone(), fit.s.clone());
            let res = init
                .and_then(|init| refit_constrained_with(data, structure.rank, &structure.edges, &init, opts.refit))
                .map_err(|e| e.to_string());
            (structure.clone(), res)
        })
        .collect();
    let refits: HashMap<Structure, std::result::Result<Refit, String>> = refits.into_iter().collect();

    let n_subj = data.n_subjects();
    for entry in path.iter_mut() {
        if entry.failure.is_some() {
            continue;
        }
        match &refits[&entry.structure] {
            Ok(refit) => {
                let free = count_free_params(data.n_items(), entry.structure.rank, &entry.structure.edges)?;
                entry.refit = Some(refit.params.clone());
                entry.refit_converged = refit.converged;
                entry.log_pl_refit = refit.log_pl;
                entry.free_params = free;
                entry.bic = bic_of_entry(refit.log_pl, free, n_subj);
            }
            Err(msg) => entry.failure = Some(format!("refit failed: {msg}")),
        }
    }

    let best_index = path
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_selectable())
        .min_by(|(i, a), (j, b)| a.bic.partial_cmp(&b.bic).expect("finite").then(i.cmp(j)))
        .map(|(i, _)| i)
        .ok_or_else(|| FlagError::InvalidInput("no grid point produced a usable fit".into()))?;
    let final_params = path[best_index].refit.clone().expect("selectable entries carry a refit");
    Ok(SelectionResult {
        path,
        best_index,
        final_params,
    })
}

/// `gamma,delta,K_hat,n_edges,log_pl_refit,free_params,bic,converged`.
pub fn write_path_csv<W: Write>(path: &[PathEntry], mut w: W) -> Result<()> {
    writeln!(w, "gamma,delta,K_hat,n_edges,log_pl_refit,free_params,bic,converged")?;
    for e in path {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            e.gamma,
            e.delta,
            e.k_hat(),
            e.n_edges(),
            e.log_pl_refit,
            e.free_params,
            e.bic,
            e.fit.converged
        )?;
    }
    Ok(())
}

/// Marginal-only starting point used by callers without a prior fit.
pub fn independence_params(data: &BinaryDataset) -> FlagParams {
    let n = data.n_items();
    let nn = data.n_subjects().max(1) as f64;
    let mut s = DMatrix::zeros(n, n);
    for (j, c) in data.col_sums().iter().enumerate() {
        let p = (c / nn).clamp(0.5 / nn, 1.0 - 0.5 / nn);
        s[(j, j)] = 2.0 * (p / (1.0 - p)).ln();
    }
    FlagParams::new(DMatrix::zeros(n, n), s).expect("diagonal S is symmetric")
}
