//! Simulate setting 1, select a model over a small lattice, and compare the
//! selected structure with the truth.

use flag_core::admm::{edges_of, SolverConfig};
use flag_core::eval::selection_metrics;
use flag_core::select::grid_search_select;
use flag_core::sim::{builtin_design, simulate_dataset, DesignOptions};

fn main() -> flag_core::Result<()> {
    let n = 1000;
    let design = builtin_design(1, DesignOptions::default())?;
    let sim = simulate_dataset(&design, n, 7)?;

    let root = (n as f64).sqrt();
    let gammas: Vec<f64> = (1..=8).map(|k| 0.25 * k as f64 / root).collect();
    let result = grid_search_select(&sim.data, &gammas, &[4.0, 12.0], &SolverConfig::default())?;

    let best = result.best();
    let metrics = selection_metrics(&best.structure, sim.truth.l(), sim.truth.s());
    println!(
        "gamma={:.4} delta={:.4} K_hat={} edges={} (true {}) bic={:.1}",
        best.gamma,
        best.delta,
        best.k_hat(),
        best.n_edges(),
        edges_of(design.graph()).len(),
        best.bic
    );
    println!("{metrics:?}");
    Ok(())
}
