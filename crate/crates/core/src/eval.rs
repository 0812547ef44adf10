//! Recovery criteria and the replicated simulation study.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::admm::{edges_of, SolverConfig, Structure};
use crate::error::{FlagError, Result};
use crate::linalg::psd_rank;
use crate::rng::child_seed;
use crate::select::{grid_search_select_with, PathEntry, SelectOptions};
use crate::sim::{builtin_design, simulate_dataset, DesignOptions};

/// C1: whether any path entry has the true rank and exactly the true edge set.
pub fn criterion_path_capture(path: &[PathEntry], l_true: &DMatrix<f64>, s_true: &DMatrix<f64>) -> bool {
    let truth = Structure {
        rank: psd_rank(l_true),
        edges: edges_of(s_true),
    };
    path.iter()
        .any(|e| e.failure.is_none() && e.structure == truth)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionMetrics {
    /// C2: rank recovered.
    pub rank_correct: bool,
    /// C3: share of true edges found; `None` when the truth has no edges.
    pub true_positive_rate: Option<f64>,
    /// C4: false edges over true non-edge pairs; `None` when the true graph is
    /// complete.
    pub false_edge_rate: Option<f64>,
}

pub fn selection_metrics(selected: &Structure, l_true: &DMatrix<f64>, s_true: &DMatrix<f64>) -> SelectionMetrics {
    let n = s_true.nrows();
    let truth: BTreeSet<(usize, usize)> = edges_of(s_true).into_iter().collect();
    let found = selected.edges.iter().filter(|e| truth.contains(e)).count();
    let false_edges = selected.edges.len() - found;
    let non_edges = n * n.saturating_sub(1) / 2 - truth.len();
    SelectionMetrics {
        rank_correct: selected.rank == psd_rank(l_true),
        true_positive_rate: (!truth.is_empty()).then(|| found as f64 / truth.len() as f64),
        false_edge_rate: (non_edges > 0).then(|| false_edges as f64 / non_edges as f64),
    }
}

/// Tuning grid for the study. `gamma_scaled` holds `γ·√N`, so the actual
/// γ values shrink with sample size.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub gamma_scaled: Vec<f64>,
    pub rho_grid: Vec<f64>,
    pub select: SelectOptions,
    pub design: DesignOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            gamma_scaled: (1..=10).map(|k| 0.25 * k as f64).collect(),
            rho_grid: vec![4.0, 12.0],
            select: SelectOptions::default(),
            design: DesignOptions::default(),
        }
    }
}

impl StudyConfig {
    pub fn gamma_grid(&self, n_subjects: usize) -> Vec<f64> {
        let root = (n_subjects as f64).sqrt();
        self.gamma_scaled.iter().map(|g| g / root).collect()
    }

    pub fn with_solver(mut self, solver: SolverConfig) -> Self {
        self.select.solver = solver;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub seed: u64,
    pub path_capture: bool,
    pub selected: Structure,
    pub metrics: SelectionMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub setting: u8,
    pub n_subjects: usize,
    pub reps: usize,
    pub failures: usize,
    pub c1_mean: f64,
    pub c2_mean: f64,
    pub c3_mean: f64,
    pub c3_se: f64,
    pub c4_mean: f64,
    pub c4_se: f64,
    pub replications: Vec<ReplicationOutcome>,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Seed of replication `rep` in cell `(setting, n)`.
pub fn replication_seed(seed: u64, setting: u8, n_subjects: usize, rep: usize) -> u64 {
    child_seed(child_seed(child_seed(seed, setting as u64), n_subjects as u64), rep as u64)
}

pub fn run_replication(setting: u8, n_subjects: usize, seed: u64, config: &StudyConfig) -> Result<ReplicationOutcome> {
    let design = builtin_design(setting, config.design)?;
    let sim = simulate_dataset(&design, n_subjects, seed)?;
    let truth = design.truth();
    let result = grid_search_select_with(
        &sim.data,
        &config.gamma_grid(n_subjects),
        &config.rho_grid,
        &config.select,
    )?;
    let selected = result.best().structure.clone();
    Ok(ReplicationOutcome {
        seed,
        path_capture: criterion_path_capture(&result.path, truth.l(), truth.s()),
        metrics: selection_metrics(&selected, truth.l(), truth.s()),
        selected,
    })
}

pub fn run_simulation_study(settings: &[u8], ns: &[usize], reps: usize, seed: u64) -> Result<Vec<StudyResult>> {
    run_simulation_study_with(settings, ns, reps, seed, &StudyConfig::default())
}

/// One row per `(setting, N)` cell in input order. Failed replications are
/// counted and left out of the means.
pub fn run_simulation_study_with(
    settings: &[u8],
    ns: &[usize],
    reps: usize,
    seed: u64,
    config: &StudyConfig,
) -> Result<Vec<StudyResult>> {
    if reps == 0 {
        return Err(FlagError::InvalidInput("need at least one replication".into()));
    }
    for &s in settings {
        builtin_design(s, config.design)?;
    }
    let mut out = Vec::new();
    for &setting in settings {
        for &n in ns {
            let outcomes: Vec<Result<ReplicationOutcome>> = (0..reps)
                .into_par_iter()
                .map(|r| run_replication(setting, n, replication_seed(seed, setting, n, r), config))
                .collect();
            let ok: Vec<ReplicationOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok().cloned()).collect();
            let as_unit = |b: bool| if b { 1.0 } else { 0.0 };
            let c1: Vec<f64> = ok.iter().map(|o| as_unit(o.path_capture)).collect();
            let c2: Vec<f64> = ok.iter().map(|o| as_unit(o.metrics.rank_correct)).collect();
            let c3: Vec<f64> = ok.iter().filter_map(|o| o.metrics.true_positive_rate).collect();
            let c4: Vec<f64> = ok.iter().filter_map(|o| o.metrics.false_edge_rate).collect();
            let (c3_mean, c3_se) = mean_se(&c3);
            let (c4_mean, c4_se) = mean_se(&c4);
            out.push(StudyResult {
                setting,
                n_subjects: n,
                reps,
                failures: reps - ok.len(),
                c1_mean: mean_se(&c1).0,
                c2_mean: mean_se(&c2).0,
                c3_mean,
                c3_se,
                c4_mean,
                c4_se,
                replications: ok,
            });
        }
    }
    Ok(out)
}

/// `setting,N,reps,failures,C1,C2,C3_mean,C3_se,C4_mean,C4_se`, proportions
/// in percent.
pub fn write_table_csv<W: Write>(results: &[StudyResult], mut w: W) -> Result<()> {
    writeln!(w, "setting,N,reps,failures,C1,C2,C3_mean,C3_se,C4_mean,C4_se")?;
    for r in results {
        writeln!(
            w,
            "{},{},{},{},{:.1},{:.1},{:.1},{:.1},{:.1},{:.1}",
            r.setting,
            r.n_subjects,
            r.reps,
            r.failures,
            100.0 * r.c1_mean,
            100.0 * r.c2_mean,
            100.0 * r.c3_mean,
            100.0 * r.c3_se,
            100.0 * r.c4_mean,
            100.0 * r.c4_se
        )?;
    }
    Ok(())
}

/// `setting,N,C1` for the path-capture curve.
pub fn write_capture_csv<W: Write>(results: &[StudyResult], mut w: W) -> Result<()> {
    writeln!(w, "setting,N,C1")?;
    for r in results {
        writeln!(w, "{},{},{}", r.setting, r.n_subjects, r.c1_mean)?;
    }
    Ok(())
}
