//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary so the
//! report is always printed; exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use flag_core::admm::{admm_fit, extract_structure, project_consistency, prox_l1_offdiag, prox_nuclear_psd, SolverConfig};
use flag_core::eval::{run_simulation_study, run_simulation_study_with, write_table_csv, StudyConfig};
use flag_core::exact::{enumerate_pmf, exact_conditional};
use flag_core::gof::parametric_bootstrap_gof;
use flag_core::interpret::{maximal_cliques, varimax_criterion, varimax_with, VarimaxOptions};
use flag_core::model::{conditional_prob, grad_h};
use flag_core::select::{bic_of_entry, count_free_params, fit_irt_baseline, grid_search_select};
use flag_core::sim::{gibbs_sample, simulate_dataset, builtin_design, DesignOptions, GibbsConfig, SimDesign, ThetaSampler};
use flag_core::{CombinedMatrix, FlagParams};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = (bool, String);

fn c1_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1001);
    let mut worst = 0.0f64;
    for inst in 0..200 {
        let n = 2 + inst % 7;
        let p = FlagParams::new(random_psd(&mut r, n, 2, 0.8), random_sym(&mut r, n, 1.5)).unwrap();
        let m = p.combined();
        for idx in 0..1usize << n {
            let x = bits(idx, n);
            for j in 0..n {
                let d = (conditional_prob(&m, &x, j).unwrap() - exact_conditional(&p, &x, j).unwrap()).abs();
                worst = worst.max(d);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (worst <= 1e-10 && secs < 60.0, format!("max abs diff {worst:.2e}, {secs:.1}s"))
}

fn c2_gradient() -> Outcome {
    let mut r = rng(1002);
    let mut worst = 0.0f64;
    for inst in 0..50 {
        let n = 2 + inst % 9;
        let p = 0.3 + 0.4 * r.random::<f64>();
        let data = random_data(&mut r, n, 20 + (inst * 37) % 181, p);
        let m = CombinedMatrix::new(random_sym(&mut r, n, 1.0)).unwrap();
        let g = grad_h(&m, &data).unwrap();
        let fd = fd_gradient(m.matrix(), &data, 1e-6);
        worst = worst.max(max_abs(&(&g - &fd)) / (1.0 + max_abs(&g)));
    }
    (worst <= 1e-6, format!("max relative sup-norm error {worst:.2e}"))
}

fn c3_proximal() -> Outcome {
    let t = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 0.1]));
    let want = DMatrix::from_diagonal(&DVector::from_vec(vec![2.5, 0.5, 0.0]));
    let diag_err = max_abs(&(prox_nuclear_psd(&t, 0.5).unwrap() - want));

    let mut r = rng(1003);
    let mut grid_err = 0.0f64;
    for _ in 0..10 {
        let t = random_sym(&mut r, 2, 1.5);
        grid_err = grid_err.max(max_abs(&(prox_nuclear_psd(&t, 0.3).unwrap() - grid_nuclear_prox(&t, 0.3))));
    }

    let mut soft_err = 0.0f64;
    for _ in 0..10 {
        let t = random_sym(&mut r, 4, 1.0);
        let out = prox_l1_offdiag(&t, 0.25).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { t[(i, j)] } else { scalar_l1_prox_oracle(t[(i, j)], 0.25) };
                soft_err = soft_err.max((out[(i, j)] - want).abs());
            }
        }
    }

    let mut constraint = 0.0f64;
    let mut beaten = 0;
    for _ in 0..5 {
        let gen = |r: &mut rand_chacha::ChaCha8Rng| DMatrix::from_fn(4, 4, |_, _| 2.0 * r.random::<f64>() - 1.0);
        let (bm, bl, bs) = (gen(&mut r), gen(&mut r), gen(&mut r));
        let (m, l, s) = project_consistency(&bm, &bl, &bs);
        constraint = constraint.max(max_abs(&(&m - m.transpose()))).max(max_abs(&(&m - &l - &s)));
        let dist = |m2: &DMatrix<f64>, l2: &DMatrix<f64>, s2: &DMatrix<f64>| {
            (m2 - &bm).norm_squared() + (l2 - &bl).norm_squared() + (s2 - &bs).norm_squared()
        };
        let best = dist(&m, &l, &s);
        for _ in 0..500 {
            let pm = random_sym(&mut r, 4, 2.0);
            let pl = gen(&mut r) * 2.0;
            let ps = &pm - &pl;
            if dist(&pm, &pl, &ps) < best {
                beaten += 1;
            }
        }
    }
    let pass = diag_err == 0.0 && grid_err <= 1e-3 && soft_err <= 1e-10 && constraint <= 1e-14 && beaten == 0;
    (
        pass,
        format!(
            "diag case err {diag_err:.1e}, 2x2 grid err {grid_err:.1e}, soft-threshold err {soft_err:.1e}, projection constraint {constraint:.1e}, probes beating projection {beaten}"
        ),
    )
}

fn c4_admm() -> Outcome {
    let cfg = SolverConfig::default();
    let mut worst_direct = 0.0f64;
    let mut worst_ref = 0.0f64;
    let mut all_converged = true;
    let mut residuals_ok = true;
    let mut saturated = true;
    for seed in 0..3 {
        let data = fixture(2000 + seed);
        let zero = admm_fit(&data, 0.0, 0.0, &cfg, None).unwrap();
        let direct = direct_smooth_minimum(&data);
        worst_direct = worst_direct.max((zero.fit.objective - direct).abs() / direct.abs());

        let out = admm_fit(&data, 0.02, 0.1, &cfg, None).unwrap();
        let long = SolverConfig {
            max_iter: 10 * cfg.max_iter,
            tol_abs: cfg.tol_abs / 10.0,
            tol_rel: cfg.tol_rel / 10.0,
            ..cfg
        };
        let reference = admm_fit(&data, 0.02, 0.1, &long, None).unwrap();
        worst_ref = worst_ref.max((out.fit.objective - reference.fit.objective).abs() / reference.fit.objective.abs());
        for o in [&zero, &out] {
            all_converged &= o.fit.converged;
            let st = &o.state;
            let xn = (st.m.norm_squared() + st.l.norm_squared() + st.s.norm_squared()).sqrt();
            let zn = (st.m_z.norm_squared() + st.l_z.norm_squared() + st.s_z.norm_squared()).sqrt();
            let tol = cfg.tol_abs * 108f64.sqrt() + cfg.tol_rel * xn.max(zn);
            residuals_ok &= o.fit.primal_residual <= tol && o.fit.dual_residual <= tol;
        }
        let sat = extract_structure(&admm_fit(&data, 10.0, 10.0, &cfg, None).unwrap().fit);
        saturated &= sat.rank == 0 && sat.edges.is_empty();
    }
    let pass = worst_direct <= 1e-5 && worst_ref <= 1e-5 && all_converged && residuals_ok && saturated;
    (
        pass,
        format!(
            "rel gap vs direct solve {worst_direct:.1e}, vs 10x reference {worst_ref:.1e}, converged {all_converged}, residuals within tolerance {residuals_ok}, saturation gives K=0 and no edges {saturated}"
        ),
    )
}

fn c5_bic_identity() -> Outcome {
    let edges: Vec<(usize, usize)> = (0..79).flat_map(|i| ((i + 1)..79).map(move |j| (i, j))).take(346).collect();
    let free = count_free_params(79, 3, &edges).unwrap();
    let bic = bic_of_entry(-26177.6, free, 824);
    (free == 659 && (bic - 56779.8).abs() <= 0.1, format!("free parameters {free}, BIC {bic:.2}"))
}

fn c6_simulation_study() -> Outcome {
    let start = Instant::now();
    let s1 = run_simulation_study(&[1], &[2000, 250], 10, 0).unwrap();
    let s3 = run_simulation_study(&[3], &[2000], 10, 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut table = Vec::new();
    write_table_csv(&s1.iter().chain(&s3).cloned().collect::<Vec<_>>(), &mut table).unwrap();
    eprint!("{}", String::from_utf8(table).unwrap());
    let (big, small, three) = (&s1[0], &s1[1], &s3[0]);
    let truth = builtin_design(1, DesignOptions::default()).unwrap().truth();
    let true_edges = flag_core::admm::edges_of(truth.s());
    let exact = big.replications.iter().filter(|r| r.selected.rank == 1 && r.selected.edges == true_edges).count();
    let checks = [
        big.c2_mean == 1.0,
        big.c3_mean >= 0.95,
        big.c4_mean <= 0.10,
        big.c1_mean >= 0.9,
        small.c3_mean >= 0.90,
        small.c4_mean <= 0.15,
        three.c2_mean >= 0.9,
        big.failures + small.failures + three.failures == 0,
        secs <= 3600.0,
    ];
    (
        checks.iter().all(|c| *c),
        format!(
            "S1 N=2000: C1 {:.2} C2 {:.2} C3 {:.3} C4 {:.4}; S1 N=250: C3 {:.3} C4 {:.4}; S3 N=2000: C2 {:.2}; failures {}; S1 N=2000 exact structure {exact}/10 (informational); {secs:.0}s",
            big.c1_mean,
            big.c2_mean,
            big.c3_mean,
            big.c4_mean,
            small.c3_mean,
            small.c4_mean,
            three.c2_mean,
            big.failures + small.failures + three.failures
        ),
    )
}

fn c7_samplers() -> Outcome {
    let mut r = rng(1007);
    let params = FlagParams::new(random_psd(&mut r, 3, 1, 0.9), random_sym(&mut r, 3, 1.2)).unwrap();
    let data = gibbs_sample(&params, 100_000, &GibbsConfig { seed: 7, ..GibbsConfig::default() }).unwrap();
    let probs = enumerate_pmf(&params).unwrap();
    let mut counts = [0usize; 8];
    for x in data.rows() {
        counts[x[0] as usize + 2 * x[1] as usize + 4 * x[2] as usize] += 1;
    }
    let tv = 0.5 * counts.iter().zip(probs.probs()).map(|(&c, p)| (c as f64 / 1e5 - p).abs()).sum::<f64>();

    // K=1, J=2 accept/reject against a quadrature CDF of the exact density.
    let a = DMatrix::from_column_slice(2, 1, &[1.5, -0.8]);
    let mut s = DMatrix::zeros(2, 2);
    s[(0, 1)] = 0.9;
    s[(1, 0)] = 0.9;
    let design = SimDesign::new(a.clone(), s.clone()).unwrap();
    let dens = |t: f64| {
        let e = [a[(0, 0)] * t, a[(1, 0)] * t];
        let w = 1.0 + e[0].exp() + e[1].exp() + (e[0] + e[1] + s[(0, 1)]).exp();
        (-0.5 * t * t + w.ln()).exp()
    };
    let (lo, hi, m) = (-12.0, 12.0, 24001);
    let h = (hi - lo) / (m - 1) as f64;
    let mut cdf = vec![0.0; m];
    for i in 1..m {
        let (t0, t1) = (lo + h * (i - 1) as f64, lo + h * i as f64);
        cdf[i] = cdf[i - 1] + 0.5 * h * (dens(t0) + dens(t1));
    }
    let z = cdf[m - 1];
    let mut sampler = ThetaSampler::new(&design).unwrap();
    let mut draws: Vec<f64> = (0..100_000).map(|_| sampler.sample(&mut r).unwrap()[0]).collect();
    draws.sort_by(f64::total_cmp);
    let mut ks = 0.0f64;
    for (i, &t) in draws.iter().enumerate() {
        let pos = ((t - lo) / h).clamp(0.0, (m - 1) as f64);
        let k = (pos.floor() as usize).min(m - 2);
        let w = pos - k as f64;
        let f = ((1.0 - w) * cdf[k] + w * cdf[k + 1]) / z;
        ks = ks.max((f - i as f64 / 1e5).abs()).max(((i + 1) as f64 / 1e5 - f).abs());
    }

    let zero = SimDesign::new(DMatrix::zeros(4, 1), DMatrix::zeros(4, 4)).unwrap();
    let mut sampler = ThetaSampler::new(&zero).unwrap();
    let draws: Vec<f64> = (0..100_000).map(|_| sampler.sample(&mut r).unwrap()[0]).collect();
    let mean = draws.iter().sum::<f64>() / 1e5;
    let var = draws.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 1e5;
    let pass = tv <= 0.02 && ks <= 0.01 && mean.abs() <= 0.02 && (var - 1.0).abs() <= 0.02;
    (pass, format!("Gibbs TV {tv:.4}, accept/reject KS {ks:.4}, A=0 mean {mean:.4} var {var:.4}"))
}

/// J=6, one factor with loadings 0.7 plus the given pair interactions;
/// diagonals make every row of `L + S` sum to zero.
fn gof_truth(edges: &[(usize, usize, f64)]) -> FlagParams {
    let a = DVector::from_element(6, 0.7);
    let l = &a * a.transpose();
    let mut s = DMatrix::zeros(6, 6);
    for &(i, j, w) in edges {
        s[(i, j)] = w;
        s[(j, i)] = w;
    }
    for j in 0..6 {
        let row: f64 = (0..6).filter(|&i| i != j).map(|i| l[(i, j)] + s[(i, j)]).sum();
        s[(j, j)] = -row - l[(j, j)];
    }
    FlagParams::new(l, s).unwrap()
}

fn c8_gof() -> Outcome {
    let null = gof_truth(&[]);
    let mut calibrated = 0;
    for rep in 0..20u64 {
        let data = gibbs_sample(&null, 500, &GibbsConfig { seed: 3000 + rep, ..GibbsConfig::default() }).unwrap();
        let report = parametric_bootstrap_gof(&data, &null, 200, &GibbsConfig { seed: 4000 + rep, ..GibbsConfig::default() }).unwrap();
        if report.p_two_sided > 0.01 {
            calibrated += 1;
        }
    }
    // The statistic is nearly centred by any fit that can rescale M, so only
    // strong local dependence the factor cannot absorb is detectable.
    let alt = gof_truth(&[(0, 1, 8.0), (2, 3, 8.0), (4, 5, 8.0)]);
    let mut rejected = 0;
    for rep in 0..20u64 {
        let data = gibbs_sample(&alt, 2000, &GibbsConfig { seed: 5000 + rep, ..GibbsConfig::default() }).unwrap();
        let irt = fit_irt_baseline(&data, 1).unwrap();
        let report =
            parametric_bootstrap_gof(&data, &irt.params, 200, &GibbsConfig { seed: 6000 + rep, ..GibbsConfig::default() }).unwrap();
        if report.p_two_sided < 0.05 {
            rejected += 1;
        }
    }
    (
        calibrated >= 18 && rejected >= 18,
        format!("self-consistent p>0.01 in {calibrated}/20, IRT-only on edge truth p<0.05 in {rejected}/20"),
    )
}

fn c9_varimax_cliques() -> Outcome {
    let mut r = rng(1009);
    let a = DMatrix::from_fn(20, 3, |_, _| 2.0 * r.random::<f64>() - 1.0);
    let rot = varimax_with(&a, VarimaxOptions { kaiser: false, ..VarimaxOptions::default() }).unwrap();
    let ortho = (rot.rotation.transpose() * &rot.rotation - DMatrix::identity(3, 3)).amax();
    let invariance = (&rot.rotated * rot.rotated.transpose() - &a * a.transpose()).norm();
    let mut beaten = 0;
    for _ in 0..1000 {
        let g = DMatrix::from_fn(3, 3, |_, _| StandardNormal.sample(&mut r));
        if varimax_criterion(&(&a * g.qr().q())) > rot.criterion + 1e-12 {
            beaten += 1;
        }
    }

    let n = 20;
    let mut adj = vec![vec![false; n]; n];
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if r.random::<f64>() < 0.2 {
                adj[i][j] = true;
                adj[j][i] = true;
                edges.push((i, j));
            }
        }
    }
    let got = maximal_cliques(&edges, n, 1).unwrap();
    // Brute force: every vertex subset up to size 6 that is a clique and
    // cannot be extended.
    let mut brute = Vec::new();
    let mut stack: Vec<(Vec<usize>, usize)> = vec![(vec![], 0)];
    while let Some((cur, start)) = stack.pop() {
        if !cur.is_empty() && (0..n).all(|v| cur.contains(&v) || !cur.iter().all(|&u| adj[u][v])) {
            brute.push(cur.clone());
        }
        if cur.len() < 6 {
            for v in start..n {
                if cur.iter().all(|&u| adj[u][v]) {
                    let mut next = cur.clone();
                    next.push(v);
                    stack.push((next, v + 1));
                }
            }
        }
    }
    brute.sort();
    let cliques_ok = got == brute;
    (
        ortho <= 1e-10 && invariance <= 1e-10 && beaten == 0 && cliques_ok,
        format!(
            "orthogonality {ortho:.1e}, AA' invariance {invariance:.1e}, random rotations beating varimax {beaten}/1000, cliques match brute force {cliques_ok} ({} cliques)",
            got.len()
        ),
    )
}

fn c10_determinism() -> Outcome {
    let run = || -> Vec<u8> {
        let mut out = Vec::new();
        let design = builtin_design(3, DesignOptions::default()).unwrap();
        let sim = simulate_dataset(&design, 400, 11).unwrap();
        sim.data.write_csv(&mut out).unwrap();
        out.extend(format!("{:?}", sim.theta.as_slice()).bytes());
        let params = FlagParams::new(random_psd(&mut rng(5), 6, 1, 0.6), random_sym(&mut rng(6), 6, 0.5)).unwrap();
        let gibbs = gibbs_sample(&params, 300, &GibbsConfig { seed: 12, ..GibbsConfig::default() }).unwrap();
        gibbs.write_csv(&mut out).unwrap();
        let gof = parametric_bootstrap_gof(&gibbs, &params, 30, &GibbsConfig { seed: 13, ..GibbsConfig::default() }).unwrap();
        gof.write_bootstrap_csv(&mut out).unwrap();
        out.extend(format!("{} {} {}", gof.p_lower, gof.p_upper, gof.p_two_sided).bytes());
        let root = 400f64.sqrt();
        let sel = grid_search_select(&sim.data, &[1.0 / root, 2.0 / root], &[4.0, 12.0], &SolverConfig::default()).unwrap();
        flag_core::select::write_path_csv(&sel.path, &mut out).unwrap();
        out.extend(format!("{:?}{:?}", sel.final_params.l().as_slice(), sel.final_params.s().as_slice()).bytes());
        let study = run_simulation_study_with(
            &[1],
            &[150],
            2,
            14,
            &StudyConfig { gamma_scaled: vec![1.0, 2.0], rho_grid: vec![12.0], ..StudyConfig::default() },
        )
        .unwrap();
        write_table_csv(&study, &mut out).unwrap();
        out
    };
    let outputs: Vec<Vec<u8>> = [1usize, 2, 4]
        .iter()
        .map(|&t| rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap().install(run))
        .collect();
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    (same, format!("byte-identical across 1, 2 and 4 worker threads: {same} ({} bytes)", outputs[0].len()))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("oracle equivalence of conditionals", c1_oracle_equivalence),
        ("gradient vs central differences", c2_gradient),
        ("proximal operators and projection", c3_proximal),
        ("ADMM correctness and saturation", c4_admm),
        ("BIC identity", c5_bic_identity),
        ("simulation study at desk scale", c6_simulation_study),
        ("samplers", c7_samplers),
        ("GOF calibration and power", c8_gof),
        ("varimax and cliques", c9_varimax_cliques),
        ("determinism", c10_determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !pass {
            failed += 1;
        }
        println!(
            "acceptance {:>2} {} {name}: {detail} [{:.1}s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
