//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use flag_core::BinaryDataset;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_sym(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = scale * (2.0 * rng.random::<f64>() - 1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// `BBᵀ` with `B` of width `k`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, k: usize, scale: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, k, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0));
    let l = &b * b.transpose();
    (&l + l.transpose()) * 0.5
}

pub fn random_data(rng: &mut ChaCha8Rng, n_items: usize, n_subjects: usize, p: f64) -> BinaryDataset {
    let rows = (0..n_items * n_subjects).map(|_| u8::from(rng.random::<f64>() < p)).collect();
    BinaryDataset::new(n_items, rows).unwrap()
}

pub fn bits(index: usize, n: usize) -> Vec<u8> {
    (0..n).map(|k| ((index >> k) & 1) as u8).collect()
}

fn quad(m: &DMatrix<f64>, x: &[u8]) -> f64 {
    let n = x.len();
    let mut v = 0.0;
    for i in 0..n {
        for j in 0..n {
            v += m[(i, j)] * x[i] as f64 * x[j] as f64;
        }
    }
    0.5 * v
}

/// Joint probabilities by direct summation, index bit `k` = item `k`.
pub fn brute_pmf(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let logw: Vec<f64> = (0..1usize << n).map(|s| quad(m, &bits(s, n))).collect();
    let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

pub fn brute_conditional(m: &DMatrix<f64>, x: &[u8], j: usize) -> f64 {
    let mut one = x.to_vec();
    one[j] = 1;
    let mut zero = x.to_vec();
    zero[j] = 0;
    let lo = quad(m, &zero);
    let hi = quad(m, &one);
    1.0 / (1.0 + (lo - hi).exp())
}

/// `−(1/N) Σ_i Σ_j log P(x_ij | x_i,−j)` by explicit loops.
pub fn naive_h(m: &DMatrix<f64>, data: &BinaryDataset) -> f64 {
    let n = data.n_items();
    let mut total = 0.0;
    for x in data.rows() {
        for j in 0..n {
            let mut eta = 0.5 * m[(j, j)];
            for i in 0..n {
                if i != j {
                    eta += m[(i, j)] * x[i] as f64;
                }
            }
            let p1 = 1.0 / (1.0 + (-eta).exp());
            total += if x[j] == 1 { p1.ln() } else { (1.0 - p1).ln() };
        }
    }
    -total / data.n_subjects() as f64
}

/// Central differences of `naive_h` with `m_ij` and `m_ji` moved together.
pub fn fd_gradient(m: &DMatrix<f64>, data: &BinaryDataset, step: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut up = m.clone();
            let mut dn = m.clone();
            up[(i, j)] += step;
            dn[(i, j)] -= step;
            if i != j {
                up[(j, i)] += step;
                dn[(j, i)] -= step;
            }
            let d = (naive_h(&up, data) - naive_h(&dn, data)) / (2.0 * step);
            g[(i, j)] = d;
            g[(j, i)] = d;
        }
    }
    g
}

/// Exact i.i.d. draws from a small enumerated law.
pub fn sample_exact(m: &DMatrix<f64>, n_subjects: usize, rng: &mut ChaCha8Rng) -> BinaryDataset {
    let n = m.nrows();
    let pmf = brute_pmf(m);
    let mut cdf = Vec::with_capacity(pmf.len());
    let mut acc = 0.0;
    for p in &pmf {
        acc += p;
        cdf.push(acc);
    }
    let mut rows = Vec::with_capacity(n * n_subjects);
    for _ in 0..n_subjects {
        let u: f64 = rng.random::<f64>() * acc;
        let idx = cdf.partition_point(|c| *c < u).min(pmf.len() - 1);
        rows.extend(bits(idx, n));
    }
    BinaryDataset::new(n, rows).unwrap()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// J=6: one factor with loadings 0.8, one edge (0, 1) of strength 1.
pub fn fixture(seed: u64) -> BinaryDataset {
    let a = DVector::from_element(6, 0.8);
    let mut m = &a * a.transpose();
    m[(0, 1)] += 1.0;
    m[(1, 0)] += 1.0;
    for j in 0..6 {
        let row: f64 = (0..6).filter(|&i| i != j).map(|i| m[(i, j)]).sum();
        m[(j, j)] = -row;
    }
    sample_exact(&m, 500, &mut rng(seed))
}


/// Coarse-to-fine search over PSD 2×2 matrices written as `CCᵀ` with
/// `C = [[p, 0], [q, r]]`, `p, r ≥ 0`, so rank-deficient answers sit on the
/// grid boundary instead of a curved feasibility edge.
pub fn grid_nuclear_prox(t: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    let build = |p: f64, q: f64, r: f64| (p * p, p * q, q * q + r * r);
    let obj = |p: f64, q: f64, r: f64| {
        let (a, b, c) = build(p, q, r);
        let d = (a - t[(0, 0)]).powi(2) + 2.0 * (b - t[(0, 1)]).powi(2) + (c - t[(1, 1)]).powi(2);
        threshold * (a + c) + 0.5 * d
    };
    let (mut cp, mut cq, mut cr) = (1.0, 0.0, 1.0);
    let mut half = 1.5;
    let mut best = f64::INFINITY;
    for _ in 0..14 {
        let steps = 40;
        let h = 2.0 * half / steps as f64;
        let (mut bp, mut bq, mut br) = (cp, cq, cr);
        for ip in 0..=steps {
            let p = (cp - half + h * ip as f64).max(0.0);
            for iq in 0..=steps {
                let q = cq - half + h * iq as f64;
                for ir in 0..=steps {
                    let r = (cr - half + h * ir as f64).max(0.0);
                    let v = obj(p, q, r);
                    if v < best {
                        best = v;
                        (bp, bq, br) = (p, q, r);
                    }
                }
            }
        }
        (cp, cq, cr) = (bp, bq, br);
        half = 4.0 * h;
    }
    let (a, b, c) = build(cp, cq, cr);
    DMatrix::from_row_slice(2, 2, &[a, b, b, c])
}

/// Minimizer of `threshold·|s| + ½(s − t)²` found by bisection on the
/// subdifferential, which is monotone in `s`.
pub fn scalar_l1_prox_oracle(t: f64, threshold: f64) -> f64 {
    // Interval [lo, hi] of the subdifferential at s.
    let subgrad = |s: f64| {
        let base = s - t;
        if s > 0.0 {
            (base + threshold, base + threshold)
        } else if s < 0.0 {
            (base - threshold, base - threshold)
        } else {
            (base - threshold, base + threshold)
        }
    };
    let (mut lo, mut hi) = (t - threshold - 1.0, t + threshold + 1.0);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let (g_lo, g_hi) = subgrad(mid);
        if g_hi < 0.0 {
            lo = mid;
        } else if g_lo > 0.0 {
            hi = mid;
        } else {
            return mid;
        }
    }
    0.5 * (lo + hi)
}


pub fn kkt_projection(bm: &DMatrix<f64>, bl: &DMatrix<f64>, bs: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = bm.nrows();
    let nn = n * n;
    let vars = 3 * nn;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let cons = nn + pairs.len();
    let mut k = DMatrix::zeros(vars + cons, vars + cons);
    let mut rhs = DVector::zeros(vars + cons);
    for v in 0..vars {
        k[(v, v)] = 1.0;
    }
    for idx in 0..nn {
        rhs[idx] = bm[idx];
        rhs[nn + idx] = bl[idx];
        rhs[2 * nn + idx] = bs[idx];
        // M − L − S = 0
        let row = vars + idx;
        for (col, coef) in [(idx, 1.0), (nn + idx, -1.0), (2 * nn + idx, -1.0)] {
            k[(row, col)] = coef;
            k[(col, row)] = coef;
        }
    }
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let row = vars + nn + p;
        for (col, coef) in [(i + j * n, 1.0), (j + i * n, -1.0)] {
            k[(row, col)] = coef;
            k[(col, row)] = coef;
        }
    }
    let sol = k.lu().solve(&rhs).unwrap();
    let grab = |off: usize| DMatrix::from_column_slice(n, n, &sol.as_slice()[off..off + nn]);
    (grab(0), grab(nn), grab(2 * nn))
}


/// Gradient descent with backtracking on the smooth objective over symmetric
/// M, using central-difference gradients.
pub fn direct_smooth_minimum(data: &BinaryDataset) -> f64 {
    let n = data.n_items();
    let mut m = DMatrix::zeros(n, n);
    let mut f = naive_h(&m, data);
    for _ in 0..20000 {
        let g = fd_gradient(&m, data, 1e-6);
        if max_abs(&g) < 1e-9 {
            break;
        }
        let mut t = 1.0;
        loop {
            let cand = &m - &g * t;
            let fc = naive_h(&cand, data);
            if fc <= f - 0.25 * t * g.norm_squared() || t < 1e-12 {
                m = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }
    f
}

