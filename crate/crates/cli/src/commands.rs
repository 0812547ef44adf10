use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde_json::{json, Value};

use flag_core::admm::{admm_fit, edges_of, extract_structure, write_trace_csv, SolverConfig};
use flag_core::eval::{run_simulation_study_with, write_capture_csv, write_table_csv, StudyConfig};
use flag_core::gof::parametric_bootstrap_gof;
use flag_core::interpret::{
    factor_scores, loadings_from_l, maximal_cliques, scale_correlations, varimax_with, within_clique_sum, ScaleKey,
    VarimaxOptions,
};
use flag_core::select::{grid_search_select_with, half_open_grid, write_path_csv, SelectOptions};
use flag_core::sim::{builtin_design, simulate_dataset, DesignOptions, GibbsConfig, SimDesign};
use flag_core::{BinaryDataset, FlagParams};

use crate::args::{EvalArgs, FitArgs, GofArgs, InterpretArgs, SelectArgs, SimulateArgs, SolverArgs};
use crate::error::CliError;
use crate::model_file::{from_rows, to_rows, write_json, DesignFile, ModelFile, TruthFile};

/// `lo:hi:n` gives `n` evenly spaced points in `(lo, hi]`; anything else is
/// read as a comma-separated list.
pub fn parse_grid(spec: &str, what: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Input(format!("--{what}: expected lo:hi:n or a comma list, got {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    let grid = if parts.len() == 3 {
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if n == 0 || !(hi > lo) {
            return Err(bad());
        }
        half_open_grid(lo, hi, n)
    } else if parts.len() == 1 {
        spec.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    } else {
        return Err(bad());
    };
    if grid.is_empty() || grid.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(CliError::Input(format!("--{what}: every grid value must be positive")));
    }
    Ok(grid)
}

fn parse_list<T: std::str::FromStr>(spec: &str, what: &str) -> Result<Vec<T>, CliError> {
    spec.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| CliError::Input(format!("--{what}: cannot parse {v:?}")))
        })
        .collect()
}

fn solver_config(args: &SolverArgs) -> Result<SolverConfig, CliError> {
    let cfg = SolverConfig {
        lambda: args.lambda,
        tol_abs: args.tol,
        tol_rel: args.tol_rel,
        max_iter: args.max_iter,
        ..SolverConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(path: &Path) -> Result<BinaryDataset, CliError> {
    BinaryDataset::read_csv_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn out_dir(out: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, prefix: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    let header: Vec<String> = (1..=m.ncols()).map(|c| format!("{prefix}{c}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn strict_check(strict: bool, ok: bool, what: String) -> Result<(), CliError> {
    if ok {
        return Ok(());
    }
    if strict {
        return Err(CliError::NotConverged(what));
    }
    eprintln!("warning: {what}");
    Ok(())
}

fn provenance(command: &str, data: &Path, extra: Value) -> BTreeMap<String, Value> {
    let mut p = BTreeMap::new();
    p.insert("command".into(), json!(command));
    p.insert("data".into(), json!(data.display().to_string()));
    if let Value::Object(map) = extra {
        p.extend(map);
    }
    p
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    let data = load_data(&args.data)?;
    let mut cfg = solver_config(&args.solver)?;
    cfg.track_objective = args.trace.is_some();
    let out = admm_fit(&data, args.gamma, args.rho * args.gamma, &cfg, None)?;
    let structure = extract_structure(&out.fit);
    println!(
        "K_hat={} n_edges={} converged={} iterations={} objective={}",
        structure.rank,
        structure.edges.len(),
        out.fit.converged,
        out.fit.iterations,
        out.fit.objective
    );
    if let Some(path) = &args.trace {
        let mut w = create(path)?;
        write_trace_csv(&out.trace, &mut w)?;
        w.flush()?;
    }
    if args.common.out.is_some() {
        let dir = out_dir(&args.common.out)?;
        let params = FlagParams::new(out.fit.l.clone(), out.fit.s.clone())?;
        let prov = provenance(
            "fit",
            &args.data,
            json!({"gamma": args.gamma, "rho": args.rho, "delta": args.rho * args.gamma, "solver": cfg}),
        );
        let model = ModelFile::from_params(&params, out.fit.converged, prov)?;
        write_json(&dir.join("model.json"), &model)?;
    }
    strict_check(
        args.common.strict,
        out.fit.converged,
        format!("ADMM did not converge in {} iterations", out.fit.iterations),
    )
}

pub fn select(args: &SelectArgs) -> Result<(), CliError> {
    let data = load_data(&args.data)?;
    let gammas = parse_grid(&args.gamma_grid, "gamma-grid")?;
    let rhos = parse_grid(&args.rho_grid, "rho-grid")?;
    let opts = SelectOptions {
        solver: solver_config(&args.solver)?,
        ..SelectOptions::default()
    };
    let res = grid_search_select_with(&data, &gammas, &rhos, &opts)?;
    let dir = out_dir(&args.common.out)?;
    let mut w = create(&dir.join("path.csv"))?;
    write_path_csv(&res.path, &mut w)?;
    w.flush()?;
    let best = res.best();
    let prov = provenance(
        "select",
        &args.data,
        json!({
            "gamma": best.gamma,
            "rho": best.rho,
            "delta": best.delta,
            "bic": best.bic,
            "log_pl": best.log_pl_refit,
            "gamma_grid": gammas,
            "rho_grid": rhos,
            "solver": opts.solver,
        }),
    );
    let converged = best.fit.converged && best.refit_converged;
    let model = ModelFile::from_params(&res.final_params, converged, prov)?;
    write_json(&dir.join("model.json"), &model)?;
    let failed = res.path.iter().filter(|e| e.failure.is_some()).count();
    println!(
        "selected gamma={} delta={} K_hat={} n_edges={} bic={} ({} grid points, {} excluded)",
        best.gamma,
        best.delta,
        best.k_hat(),
        best.n_edges(),
        best.bic,
        res.path.len(),
        failed
    );
    strict_check(
        args.common.strict,
        failed == 0 && best.refit_converged,
        format!("{failed} grid points did not converge; selected refit converged: {}", best.refit_converged),
    )
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let design = match (&args.setting, &args.design) {
        (Some(s), None) => builtin_design(
            *s,
            DesignOptions {
                edge_strength: args.edge_strength,
                loading: args.loading,
            },
        )?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read design {}: {e}", path.display())))?;
            let file: DesignFile = serde_json::from_str(&text)?;
            SimDesign::new(from_rows(&file.a, "A")?, from_rows(&file.s, "S")?)?
        }
        _ => return Err(CliError::Input("give exactly one of --setting or --design".into())),
    };
    let sim = simulate_dataset(&design, args.n, args.seed)?;
    let dir = out_dir(&args.common.out)?;
    let mut w = create(&dir.join("data.csv"))?;
    sim.data.write_csv(&mut w)?;
    w.flush()?;
    write_matrix_csv(&dir.join("theta.csv"), &sim.theta, "theta")?;
    let truth = design.truth();
    write_json(
        &dir.join("truth.json"),
        &TruthFile {
            setting: design.setting(),
            seed: args.seed,
            n_subjects: args.n,
            rank: design.n_factors(),
            edges: edges_of(design.graph()),
            a: to_rows(design.loadings()),
            l: to_rows(truth.l()),
            s: to_rows(truth.s()),
        },
    )?;
    println!("wrote {} subjects x {} items to {}", args.n, design.n_items(), dir.display());
    Ok(())
}

pub fn gof(args: &GofArgs) -> Result<(), CliError> {
    let data = load_data(&args.data)?;
    let params = ModelFile::read(&args.model)?.params()?;
    let gibbs = GibbsConfig {
        burn_in_sweeps: args.burn_in,
        thin_sweeps: args.thin,
        seed: args.seed,
    };
    let report = parametric_bootstrap_gof(&data, &params, args.boot, &gibbs)?;
    let text = format!(
        "statistic_observed = {}\nbootstrap_replicates = {}\np_lower = {}\np_upper = {}\np_two_sided = {}\n",
        report.stat_observed,
        report.n_boot(),
        report.p_lower,
        report.p_upper,
        report.p_two_sided
    );
    print!("{text}");
    let dir = out_dir(&args.common.out)?;
    std::fs::write(dir.join("gof.txt"), &text)?;
    let mut w = create(&dir.join("bootstrap.csv"))?;
    report.write_bootstrap_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn interpret(args: &InterpretArgs) -> Result<(), CliError> {
    let data = load_data(&args.data)?;
    let model = ModelFile::read(&args.model)?;
    let params = model.params()?;
    if params.n_items() != data.n_items() {
        return Err(CliError::Input(format!(
            "model has {} items, data has {}",
            params.n_items(),
            data.n_items()
        )));
    }
    let dir = out_dir(&args.common.out)?;
    let k = model.k_hat;
    if k > 0 {
        let a = loadings_from_l(params.l(), k)?;
        write_matrix_csv(&dir.join("loadings.csv"), a.matrix(), "factor")?;
        let rot = varimax_with(
            a.matrix(),
            VarimaxOptions {
                kaiser: !args.no_kaiser,
                ..VarimaxOptions::default()
            },
        )?;
        write_matrix_csv(&dir.join("rotated.csv"), &rot.rotated, "factor")?;
        write_matrix_csv(&dir.join("rotation.csv"), &rot.rotation, "factor")?;
        let scores = factor_scores(&rot.rotated, &data)?;
        write_matrix_csv(&dir.join("scores.csv"), &scores, "factor")?;
        println!(
            "K={k} varimax criterion {} -> {} in {} sweeps",
            rot.initial_criterion, rot.criterion, rot.sweeps
        );
        if let Some(path) = &args.scales {
            let file = File::open(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            let key = ScaleKey::read_csv(BufReader::new(file))?;
            let table = scale_correlations(&scores, &key, &data)?;
            let mut w = create(&dir.join("correlations.csv"))?;
            writeln!(w, "factor,{}", table.labels.join(","))?;
            for (f, row) in table.values.iter().enumerate() {
                let cells: Vec<String> = row
                    .iter()
                    .map(|v| v.map_or_else(|| "NA".to_string(), |c| c.to_string()))
                    .collect();
                writeln!(w, "{},{}", f + 1, cells.join(","))?;
            }
            w.flush()?;
        }
    } else {
        println!("K=0: no loadings to rotate");
        if args.scales.is_some() {
            eprintln!("warning: --scales ignored because the model has no latent factors");
        }
    }
    let edges = edges_of(params.s());
    let mut cliques: Vec<(Vec<usize>, f64)> = maximal_cliques(&edges, params.n_items(), args.min_clique)?
        .into_iter()
        .map(|c| {
            let sum = within_clique_sum(&c, params.s());
            (c, sum)
        })
        .collect();
    cliques.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut w = create(&dir.join("cliques.txt"))?;
    writeln!(w, "# maximal cliques of size >= {}, items 1-based, by within-clique sum of s_ij", args.min_clique)?;
    for (c, sum) in &cliques {
        let items: Vec<String> = c.iter().map(|i| (i + 1).to_string()).collect();
        writeln!(w, "{{{}}}\t{}", items.join(","), sum)?;
    }
    w.flush()?;
    println!("{} edges, {} maximal cliques of size >= {}", edges.len(), cliques.len(), args.min_clique);
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let settings: Vec<u8> = parse_list(&args.settings, "settings")?;
    let ns: Vec<usize> = parse_list(&args.ns, "ns")?;
    let config = StudyConfig {
        gamma_scaled: parse_grid(&args.gamma_grid, "gamma-grid")?,
        rho_grid: parse_grid(&args.rho_grid, "rho-grid")?,
        ..StudyConfig::default()
    }
    .with_solver(solver_config(&args.solver)?);
    let results = run_simulation_study_with(&settings, &ns, args.reps, args.seed, &config)?;
    let dir = out_dir(&args.common.out)?;
    let mut w = create(&dir.join("study_summary.csv"))?;
    write_table_csv(&results, &mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("capture_by_n.csv"))?;
    write_capture_csv(&results, &mut w)?;
    w.flush()?;
    write_table_csv(&results, std::io::stdout().lock())?;
    let failures: usize = results.iter().map(|r| r.failures).sum();
    strict_check(args.common.strict, failures == 0, format!("{failures} replications failed"))
}
