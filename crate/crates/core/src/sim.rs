//! Data generation from a known truth and Gibbs sampling from a fitted model.
//!
//! The joint law of `(θ, x)` is `∝ exp{−½‖θ‖² + xᵀAθ + ½xᵀSx}`. Because `S`
//! only couples items inside the connected components ("blocks") of its
//! graph, `x | θ` factorizes over blocks and the marginal density of `θ` is a
//! product of small block sums.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::BinaryDataset;
use crate::error::{FlagError, Result};
use crate::linalg::{check_symmetric, sym_eigen_desc};
use crate::model::{logistic, FlagParams};
use crate::optim::{self, BfgsOptions};
use crate::rng::{self, StreamRng};

pub const MAX_BLOCK: usize = 20;

#[derive(Debug, Clone)]
struct Block {
    items: Vec<usize>,
    /// `½ x_bᵀ S_b x_b` for every block outcome, bit `k` = `items[k]`.
    quad: Vec<f64>,
}

/// Generating model: loadings `A` (J×K) and graph `S` (J×J).
#[derive(Debug, Clone)]
pub struct SimDesign {
    a: DMatrix<f64>,
    s: DMatrix<f64>,
    blocks: Vec<Block>,
    setting: Option<u8>,
}

impl SimDesign {
    pub fn new(a: DMatrix<f64>, s: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&s)?;
        if a.nrows() != s.nrows() {
            return Err(FlagError::Dimension(format!(
                "A has {} rows but S is {}x{}",
                a.nrows(),
                s.nrows(),
                s.ncols()
            )));
        }
        let groups = components(&s);
        let mut blocks = Vec::with_capacity(groups.len());
        for items in groups {
            if items.len() > MAX_BLOCK {
                return Err(FlagError::TooLarge {
                    items: items.len(),
                    cap: MAX_BLOCK,
                });
            }
            let b = items.len();
            let mut quad = vec![0.0; 1 << b];
            for (idx, q) in quad.iter_mut().enumerate() {
                let mut v = 0.0;
                for p in 0..b {
                    if (idx >> p) & 1 == 0 {
                        continue;
                    }
                    v += 0.5 * s[(items[p], items[p])];
                    for r in (p + 1)..b {
                        if (idx >> r) & 1 == 1 {
                            v += s[(items[p], items[r])];
                        }
                    }
                }
                *q = v;
            }
            blocks.push(Block { items, quad });
        }
        Ok(Self {
            a,
            s,
            blocks,
            setting: None,
        })
    }

    pub fn n_items(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.a.ncols()
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn graph(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// Connected components of the off-diagonal graph of `S`, each sorted.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        self.blocks.iter().map(|b| b.items.clone()).collect()
    }

    pub fn setting(&self) -> Option<u8> {
        self.setting
    }

    /// Marginal parameters of the responses: `L = AAᵀ` and `S`.
    pub fn truth(&self) -> FlagParams {
        let l = crate::linalg::symmetrize(&(&self.a * self.a.transpose()));
        FlagParams::new(l, self.s.clone()).expect("design matrices are symmetric and L is a Gram matrix")
    }

    fn block_logits(&self, block: &Block, field: &DVector<f64>) -> Vec<f64> {
        block
            .quad
            .iter()
            .enumerate()
            .map(|(idx, q)| {
                let mut v = *q;
                for (p, &item) in block.items.iter().enumerate() {
                    if (idx >> p) & 1 == 1 {
                        v += field[item];
                    }
                }
                v
            })
            .collect()
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_factors() {
            return Err(FlagError::Dimension(format!(
                "theta has {} coordinates, design has {} factors",
                theta.len(),
                self.n_factors()
            )));
        }
        Ok(())
    }

    /// Value and gradient of the unnormalized log density of `θ`.
    fn theta_value_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let field = &self.a * theta;
        let mut value = -0.5 * theta.norm_squared();
        let mut mean_x = DVector::zeros(self.n_items());
        for block in &self.blocks {
            let logits = self.block_logits(block, &field);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (idx, lg) in logits.iter().enumerate() {
                let w = (lg - max).exp();
                total += w;
                for (p, &item) in block.items.iter().enumerate() {
                    if (idx >> p) & 1 == 1 {
                        mean_x[item] += w;
                    }
                }
            }
            for &item in &block.items {
                mean_x[item] /= total;
            }
            value += max + total.ln();
        }
        let grad = self.a.tr_mul(&mean_x) - theta;
        (value, grad)
    }
}

fn components(s: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = s.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if s[(i, j)] != 0.0 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut index_of_root = vec![usize::MAX; n];
    for v in 0..n {
        let r = find(&mut parent, v);
        if index_of_root[r] == usize::MAX {
            index_of_root[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[index_of_root[r]].push(v);
    }
    groups
}

/// `−½‖θ‖² + Σ_blocks log Σ_{x_b} exp{x_bᵀ(Aθ)_b + ½ x_bᵀ S_b x_b}`.
pub fn theta_log_density_unnorm(design: &SimDesign, theta: &[f64]) -> Result<f64> {
    design.check_theta(theta)?;
    Ok(design.theta_value_grad(&DVector::from_column_slice(theta)).0)
}

/// Exact accept/reject sampler for the marginal of `θ`.
///
/// Proposal: `N(0, c² I)` with `c² = 1 + σ_max(A)² J / 4`. The envelope
/// constant is the maximum of log-target minus log-proposal over several
/// BFGS starts, inflated by 1%. A proposal whose ratio exceeds the envelope is
/// reported as an error rather than silently accepted.
#[derive(Debug, Clone)]
pub struct ThetaSampler {
    design: SimDesign,
    scale: f64,
    log_bound: f64,
    proposals: u64,
    accepted: u64,
}

impl ThetaSampler {
    pub fn new(design: &SimDesign) -> Result<Self> {
        let k = design.n_factors();
        let j = design.n_items() as f64;
        let sigma_max2 = if k == 0 {
            0.0
        } else {
            let (vals, _) = sym_eigen_desc(&design.a.tr_mul(&design.a));
            vals[0].max(0.0)
        };
        let c2 = 1.0 + sigma_max2 * j / 4.0;
        let mut sampler = Self {
            design: design.clone(),
            scale: c2.sqrt(),
            log_bound: 0.0,
            proposals: 0,
            accepted: 0,
        };
        if k == 0 {
            sampler.log_bound = 0.0;
            return Ok(sampler);
        }

        let mut starts: Vec<DVector<f64>> = vec![DVector::zeros(k)];
        let ones = DVector::from_element(design.n_items(), 1.0);
        let full = design.a.tr_mul(&ones);
        starts.push(full.clone());
        starts.push(&full * 0.5);
        for f in 0..k {
            for sign in [-1.0, 1.0] {
                let mut t = DVector::zeros(k);
                t[f] = sign * sampler.scale;
                starts.push(t);
            }
        }
        let mut rng = rng::stream(0x5eed_0f_7e7a, 0);
        for _ in 0..16 {
            starts.push(DVector::from_fn(k, |_, _| {
                let z: f64 = rng.sample(StandardNormal);
                z * sampler.scale
            }));
        }

        let mut best = f64::NEG_INFINITY;
        for start in starts {
            let res = optim::minimize(
                |t, g| {
                    let (v, grad) = sampler.log_ratio_grad(t);
                    *g = -grad;
                    -v
                },
                start,
                None,
                BfgsOptions {
                    grad_tol: 1e-9,
                    max_iter: 500,
                },
            );
            best = best.max(-res.value);
        }
        sampler.log_bound = best + 1.01f64.ln();
        Ok(sampler)
    }

    fn log_ratio_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let (v, g) = self.design.theta_value_grad(theta);
        let c2 = self.scale * self.scale;
        let log_q = -0.5 * theta.norm_squared() / c2;
        (v - log_q, g + theta / c2)
    }

    /// `log sup f(θ)/q(θ)` (inflated), with `q` the unnormalized proposal.
    pub fn log_bound(&self) -> f64 {
        self.log_bound
    }

    pub fn proposal_scale(&self) -> f64 {
        self.scale
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<DVector<f64>> {
        let k = self.design.n_factors();
        if k == 0 {
            return Ok(DVector::zeros(0));
        }
        loop {
            let theta = DVector::from_fn(k, |_, _| {
                let z: f64 = rng.sample(StandardNormal);
                z * self.scale
            });
            let (log_ratio, _) = self.log_ratio_grad(&theta);
            self.proposals += 1;
            if log_ratio > self.log_bound {
                return Err(FlagError::EnvelopeViolation {
                    log_ratio,
                    log_bound: self.log_bound,
                    theta: theta.iter().copied().collect(),
                });
            }
            let u: f64 = rng.random();
            if u.ln() < log_ratio - self.log_bound {
                self.accepted += 1;
                return Ok(theta);
            }
        }
    }
}

/// One exact draw of `θ` from its marginal. Builds the envelope each call;
/// use [`ThetaSampler`] for repeated draws.
pub fn sample_theta<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> Result<DVector<f64>> {
    ThetaSampler::new(design)?.sample(rng)
}

fn sample_categorical<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u: f64 = rng.random::<f64>() * total;
    for (idx, w) in weights.iter().enumerate() {
        if u < *w {
            return idx;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Exact draw of `x | θ`, block by block.
pub fn sample_x_given_theta<R: Rng + ?Sized>(design: &SimDesign, theta: &[f64], rng: &mut R) -> Result<Vec<u8>> {
    design.check_theta(theta)?;
    let field = &design.a * DVector::from_column_slice(theta);
    let mut x = vec![0u8; design.n_items()];
    for block in &design.blocks {
        let logits = design.block_logits(block, &field);
        let idx = sample_categorical(&logits, rng);
        for (p, &item) in block.items.iter().enumerate() {
            x[item] = ((idx >> p) & 1) as u8;
        }
    }
    Ok(x)
}

/// Simulated responses together with the latent draws and the truth.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub data: BinaryDataset,
    /// N×K latent draws.
    pub theta: DMatrix<f64>,
    pub truth: FlagParams,
}

const SUBJECTS_PER_STREAM: usize = 64;

/// Draws `n` i.i.d. `(θ_i, x_i)` pairs. Subjects are generated in fixed-size
/// chunks, each with its own random stream, so the output is independent of
/// the thread count.
pub fn simulate_dataset(design: &SimDesign, n: usize, seed: u64) -> Result<SimulatedData> {
    let sampler = ThetaSampler::new(design)?;
    let k = design.n_factors();
    let j = design.n_items();
    let n_chunks = n.div_ceil(SUBJECTS_PER_STREAM);
    let chunks: Vec<Result<(Vec<f64>, Vec<u8>)>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng: StreamRng = rng::stream(seed, c as u64);
            let mut local = sampler.clone();
            let start = c * SUBJECTS_PER_STREAM;
            let end = (start + SUBJECTS_PER_STREAM).min(n);
            let mut thetas = Vec::with_capacity((end - start) * k);
            let mut rows = Vec::with_capacity((end - start) * j);
            for _ in start..end {
                let theta = local.sample(&mut rng)?;
                let x = sample_x_given_theta(design, theta.as_slice(), &mut rng)?;
                thetas.extend(theta.iter());
                rows.extend(x);
            }
            Ok((thetas, rows))
        })
        .collect();
    let mut thetas = Vec::with_capacity(n * k);
    let mut rows = Vec::with_capacity(n * j);
    for chunk in chunks {
        let (t, r) = chunk?;
        thetas.extend(t);
        rows.extend(r);
    }
    Ok(SimulatedData {
        data: BinaryDataset::new(j, rows)?,
        theta: DMatrix::from_row_slice(n, k, &thetas),
        truth: design.truth(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GibbsConfig {
    pub burn_in_sweeps: usize,
    pub thin_sweeps: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            burn_in_sweeps: 500,
            thin_sweeps: 5,
            seed: 0,
        }
    }
}

/// Single-site Gibbs sampler on `f(x | L, S) ∝ exp{½ xᵀ(L+S)x}`. One chain,
/// uniform random start, `burn_in_sweeps` discarded, then one state kept
/// every `thin_sweeps` sweeps.
pub fn gibbs_sample(params: &FlagParams, n: usize, config: &GibbsConfig) -> Result<BinaryDataset> {
    gibbs_sample_stream(params, n, config, 0)
}

pub(crate) fn gibbs_sample_stream(
    params: &FlagParams,
    n: usize,
    config: &GibbsConfig,
    stream: u64,
) -> Result<BinaryDataset> {
    if config.burn_in_sweeps == 0 || config.thin_sweeps == 0 {
        return Err(FlagError::InvalidInput(
            "burn-in and thinning must be at least one sweep".into(),
        ));
    }
    let m = params.combined().into_inner();
    let j = m.nrows();
    let mut rng = rng::stream(config.seed, stream);
    let mut x: Vec<u8> = (0..j).map(|_| rng.random_range(0..2u8)).collect();
    let mut field = vec![0.0; j];
    for i in 0..j {
        for l in 0..j {
            if l != i && x[l] == 1 {
                field[i] += m[(i, l)];
            }
        }
    }
    let half_diag: Vec<f64> = (0..j).map(|i| 0.5 * m[(i, i)]).collect();

    let sweep = |x: &mut Vec<u8>, field: &mut Vec<f64>, rng: &mut StreamRng| {
        for i in 0..j {
            let p = logistic(half_diag[i] + field[i]);
            let new = u8::from(rng.random::<f64>() < p);
            if new != x[i] {
                let sign = if new == 1 { 1.0 } else { -1.0 };
                for (l, f) in field.iter_mut().enumerate() {
                    if l != i {
                        *f += sign * m[(l, i)];
                    }
                }
                x[i] = new;
            }
        }
    };

    for _ in 0..config.burn_in_sweeps {
        sweep(&mut x, &mut field, &mut rng);
    }
    let mut rows = Vec::with_capacity(n * j);
    for _ in 0..n {
        for _ in 0..config.thin_sweeps {
            sweep(&mut x, &mut field, &mut rng);
        }
        rows.extend_from_slice(&x);
    }
    BinaryDataset::new(j, rows)
}

/// Magnitudes for the built-in designs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    /// Off-diagonal `s_ij` on every edge.
    pub edge_strength: f64,
    /// Loading on each item's factor; `None` uses the per-setting default.
    pub loading: Option<f64>,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            edge_strength: 1.0,
            loading: None,
        }
    }
}

pub const BUILTIN_ITEMS: usize = 30;

/// Default loading per setting: 0.3 for the one-factor settings, 0.4 for the
/// two-factor setting (15 items per factor).
pub fn default_loading(setting: u8) -> f64 {
    if setting == 3 {
        0.4
    } else {
        0.3
    }
}

/// The three 30-item simulation designs.
///
/// 1. One factor; edges `(j, j+1)` for `j = 1, 3, …, 29` (15 pairs).
/// 2. One factor; all edges inside the triples `{1,2,3}, …, {28,29,30}` (30 edges).
/// 3. Two factors (odd items on the first, even items on the second); graph of setting 1.
///
/// Diagonals of `S` are chosen so every row of `L + S` sums to zero, which
/// makes the model invariant to flipping all responses and puts every item
/// marginal at exactly ½.
pub fn builtin_design(setting: u8, opts: DesignOptions) -> Result<SimDesign> {
    let j = BUILTIN_ITEMS;
    let loading = opts.loading.unwrap_or_else(|| default_loading(setting));
    let mut s = DMatrix::zeros(j, j);
    let mut link = |a: usize, b: usize| {
        s[(a, b)] = opts.edge_strength;
        s[(b, a)] = opts.edge_strength;
    };
    let a = match setting {
        1 | 3 => {
            for p in (0..j).step_by(2) {
                link(p, p + 1);
            }
            if setting == 1 {
                DMatrix::from_element(j, 1, loading)
            } else {
                DMatrix::from_fn(j, 2, |r, c| if r % 2 == c { loading } else { 0.0 })
            }
        }
        2 => {
            for t in (0..j).step_by(3) {
                link(t, t + 1);
                link(t, t + 2);
                link(t + 1, t + 2);
            }
            DMatrix::from_element(j, 1, loading)
        }
        other => {
            return Err(FlagError::InvalidInput(format!(
                "unknown simulation setting {other}; expected 1, 2 or 3"
            )))
        }
    };
    let l = &a * a.transpose();
    for r in 0..j {
        let off: f64 = (0..j).filter(|&c| c != r).map(|c| l[(r, c)] + s[(r, c)]).sum();
        s[(r, r)] = -off - l[(r, r)];
    }
    let mut design = SimDesign::new(a, s)?;
    design.setting = Some(setting);
    Ok(design)
}
