//! Post-fit interpretation: loadings, varimax, factor scores, scale
//! correlations and maximal cliques of the conditional graph.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use nalgebra::DMatrix;

use crate::data::BinaryDataset;
use crate::error::{FlagError, Result};
use crate::linalg::{check_symmetric, sym_eigen_desc};
use crate::model::LoadingMatrix;

/// Flips each column so its largest-magnitude entry is positive. Returns the
/// applied signs.
fn orient_columns(a: &mut DMatrix<f64>) -> Vec<f64> {
    let mut signs = Vec::with_capacity(a.ncols());
    for k in 0..a.ncols() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for v in a.column(k).iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            a.column_mut(k).neg_mut();
        }
        signs.push(sign);
    }
    signs
}

/// `A = U₁ D₁^{1/2}` from the top-`k` eigenpairs of a PSD `L`.
pub fn loadings_from_l(l: &DMatrix<f64>, k: usize) -> Result<LoadingMatrix> {
    check_symmetric(l)?;
    let n = l.nrows();
    if k > n {
        return Err(FlagError::InvalidInput(format!("K = {k} exceeds {n} items")));
    }
    let (values, vectors) = sym_eigen_desc(l);
    if n > 0 {
        let floor = -1e-8 * values[0].max(1.0);
        if values[n - 1] < floor {
            return Err(FlagError::NotPsd {
                min_eig: values[n - 1],
            });
        }
    }
    let mut a = DMatrix::zeros(n, k);
    for c in 0..k {
        let scale = values[c].max(0.0).sqrt();
        a.set_column(c, &(vectors.column(c) * scale));
    }
    orient_columns(&mut a);
    LoadingMatrix::new(a)
}

#[derive(Debug, Clone)]
pub struct RotationResult {
    pub rotated: DMatrix<f64>,
    /// Orthogonal K×K matrix with `rotated = A · rotation`.
    pub rotation: DMatrix<f64>,
    pub criterion: f64,
    pub initial_criterion: f64,
    pub sweeps: usize,
    /// Criterion after every sweep.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct VarimaxOptions {
    pub kaiser: bool,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for VarimaxOptions {
    fn default() -> Self {
        Self {
            kaiser: true,
            tol: 1e-8,
            max_sweeps: 1000,
        }
    }
}

/// Sum over factors of the variance of squared loadings.
pub fn varimax_criterion(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows() as f64;
    a.column_iter()
        .map(|col| {
            let sq: Vec<f64> = col.iter().map(|v| v * v).collect();
            let mean = sq.iter().sum::<f64>() / n;
            sq.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n
        })
        .sum()
}

fn kaiser_weights(a: &DMatrix<f64>) -> Vec<f64> {
    a.row_iter()
        .map(|r| {
            let h = r.norm();
            if h > 0.0 {
                h
            } else {
                1.0
            }
        })
        .collect()
}

pub fn varimax(a: &DMatrix<f64>) -> Result<RotationResult> {
    varimax_with(a, VarimaxOptions::default())
}

/// Varimax by successive planar rotations; each plane uses the closed-form
/// optimal angle, so the criterion never decreases. With `kaiser`, rows are
/// normalized to unit length first and the criterion refers to the normalized
/// loadings. Output columns are ordered by decreasing sum of squares and
/// oriented so each column's largest-magnitude entry is positive.
pub fn varimax_with(a: &DMatrix<f64>, opts: VarimaxOptions) -> Result<RotationResult> {
    let k = a.ncols();
    let n = a.nrows();
    if k == 0 {
        return Err(FlagError::InvalidInput("varimax needs at least one factor".into()));
    }
    let weights = if opts.kaiser { kaiser_weights(a) } else { vec![1.0; n] };
    let mut x = a.clone();
    for (r, w) in weights.iter().enumerate() {
        x.row_mut(r).unscale_mut(*w);
    }
    let initial = varimax_criterion(&x);
    if k == 1 {
        return Ok(RotationResult {
            rotated: a.clone(),
            rotation: DMatrix::identity(1, 1),
            criterion: initial,
            initial_criterion: initial,
            sweeps: 0,
            history: vec![initial],
        });
    }

    let mut t = DMatrix::<f64>::identity(k, k);
    let mut current = initial;
    let mut history = vec![initial];
    let mut sweeps = 0;
    let nf = n as f64;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        for p in 0..k {
            for q in (p + 1)..k {
                let (mut sa, mut sb, mut sc, mut sd) = (0.0, 0.0, 0.0, 0.0);
                for r in 0..n {
                    let (xp, xq) = (x[(r, p)], x[(r, q)]);
                    let u = xp * xp - xq * xq;
                    let v = 2.0 * xp * xq;
                    sa += u;
                    sb += v;
                    sc += u * u - v * v;
                    sd += 2.0 * u * v;
                }
                let num = sd - 2.0 * sa * sb / nf;
                let den = sc - (sa * sa - sb * sb) / nf;
                let phi = 0.25 * num.atan2(den);
                if phi.abs() < 1e-15 {
                    continue;
                }
                let (s, c) = phi.sin_cos();
                for r in 0..n {
                    let (xp, xq) = (x[(r, p)], x[(r, q)]);
                    x[(r, p)] = c * xp + s * xq;
                    x[(r, q)] = -s * xp + c * xq;
                }
                for r in 0..k {
                    let (tp, tq) = (t[(r, p)], t[(r, q)]);
                    t[(r, p)] = c * tp + s * tq;
                    t[(r, q)] = -s * tp + c * tq;
                }
            }
        }
        let next = varimax_criterion(&x);
        history.push(next);
        let change = (next - current).abs() / current.abs().max(1e-300);
        current = next;
        if change <= opts.tol {
            break;
        }
    }

    // Reorder by explained variance, then orient.
    let mut rotated = a * &t;
    let mut order: Vec<usize> = (0..k).collect();
    let ss: Vec<f64> = rotated.column_iter().map(|c| c.norm_squared()).collect();
    order.sort_by(|&i, &j| ss[j].partial_cmp(&ss[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
    let mut t_sorted = DMatrix::zeros(k, k);
    for (dst, &src) in order.iter().enumerate() {
        t_sorted.set_column(dst, &t.column(src));
    }
    rotated = a * &t_sorted;
    let signs = orient_columns(&mut rotated);
    for (c, s) in signs.iter().enumerate() {
        if *s < 0.0 {
            t_sorted.column_mut(c).neg_mut();
        }
    }
    let rotated = a * &t_sorted;

    Ok(RotationResult {
        rotated,
        rotation: t_sorted,
        criterion: current,
        initial_criterion: initial,
        sweeps,
        history,
    })
}

/// Posterior means of the latent factors: row `i` is `Aᵀ x_i`.
pub fn factor_scores(a: &DMatrix<f64>, data: &BinaryDataset) -> Result<DMatrix<f64>> {
    if a.nrows() != data.n_items() {
        return Err(FlagError::Dimension(format!(
            "loadings have {} items, data has {}",
            a.nrows(),
            data.n_items()
        )));
    }
    let k = a.ncols();
    let mut out = DMatrix::zeros(data.n_subjects(), k);
    for (i, row) in data.rows().enumerate() {
        for c in 0..k {
            let mut v = 0.0;
            for (j, &x) in row.iter().enumerate() {
                if x == 1 {
                    v += a[(j, c)];
                }
            }
            out[(i, c)] = v;
        }
    }
    Ok(out)
}

/// Item-to-scale assignment (zero-based item indices).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScaleKey {
    pub assignment: BTreeMap<usize, String>,
    pub reverse_scored: BTreeSet<usize>,
}

impl ScaleKey {
    /// Scale labels in sorted order.
    pub fn labels(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.assignment.values().collect();
        set.into_iter().cloned().collect()
    }

    /// Reads `item_index,scale_label,reverse_flag` rows with 1-based item
    /// indices. A header row is skipped if its first field is not a number.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut key = ScaleKey::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            let Ok(item) = fields[0].parse::<usize>() else {
                if idx == 0 {
                    continue;
                }
                return Err(FlagError::Parse {
                    line: idx + 1,
                    msg: format!("item index {:?} is not a positive integer", fields[0]),
                });
            };
            if item == 0 || fields.len() < 2 {
                return Err(FlagError::Parse {
                    line: idx + 1,
                    msg: "expected item_index (1-based), scale_label[, reverse_flag]".into(),
                });
            }
            if key.assignment.insert(item - 1, fields[1].to_string()).is_some() {
                return Err(FlagError::Parse {
                    line: idx + 1,
                    msg: format!("item {item} assigned to more than one scale"),
                });
            }
            let reverse = fields
                .get(2)
                .map(|f| matches!(f.to_ascii_lowercase().as_str(), "1" | "true" | "yes" | "r"))
                .unwrap_or(false);
            if reverse {
                key.reverse_scored.insert(item - 1);
            }
        }
        Ok(key)
    }
}

/// Pearson correlations between score columns (rows of the table) and scale
/// totals (columns). `None` marks a zero-variance input.
#[derive(Debug, Clone)]
pub struct CorrelationTable {
    pub labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

/// Scale totals are raw sums of the assigned items' responses.
pub fn scale_correlations(scores: &DMatrix<f64>, key: &ScaleKey, data: &BinaryDataset) -> Result<CorrelationTable> {
    if scores.nrows() != data.n_subjects() {
        return Err(FlagError::Dimension(format!(
            "{} score rows for {} subjects",
            scores.nrows(),
            data.n_subjects()
        )));
    }
    if let Some(&bad) = key.assignment.keys().find(|&&i| i >= data.n_items()) {
        return Err(FlagError::IndexOutOfRange {
            index: bad,
            len: data.n_items(),
        });
    }
    let labels = key.labels();
    if labels.is_empty() {
        return Err(FlagError::InvalidInput("scale key assigns no items".into()));
    }
    let totals: Vec<Vec<f64>> = labels
        .iter()
        .map(|label| {
            let items: Vec<usize> = key
                .assignment
                .iter()
                .filter(|(_, l)| *l == label)
                .map(|(i, _)| *i)
                .collect();
            data.rows()
                .map(|row| items.iter().map(|&i| row[i] as f64).sum())
                .collect()
        })
        .collect();
    let values = scores
        .column_iter()
        .map(|col| {
            let col: Vec<f64> = col.iter().copied().collect();
            totals.iter().map(|t| pearson(&col, t)).collect()
        })
        .collect();
    Ok(CorrelationTable { labels, values })
}

/// All maximal cliques with at least `min_size` vertices (Bron–Kerbosch with
/// Tomita pivoting). Each clique is sorted; the list is sorted
/// lexicographically. Isolated vertices count as cliques of size one.
pub fn maximal_cliques(edges: &[(usize, usize)], n_vertices: usize, min_size: usize) -> Result<Vec<Vec<usize>>> {
    let mut adj = vec![BTreeSet::new(); n_vertices];
    for &(a, b) in edges {
        if a >= n_vertices || b >= n_vertices {
            return Err(FlagError::IndexOutOfRange {
                index: a.max(b),
                len: n_vertices,
            });
        }
        if a != b {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }
    let mut out = Vec::new();
    let p: BTreeSet<usize> = (0..n_vertices).collect();
    expand(&adj, &mut Vec::new(), p, BTreeSet::new(), min_size, &mut out);
    for c in out.iter_mut() {
        c.sort_unstable();
    }
    out.sort();
    Ok(out)
}

fn expand(
    adj: &[BTreeSet<usize>],
    r: &mut Vec<usize>,
    mut p: BTreeSet<usize>,
    mut x: BTreeSet<usize>,
    min_size: usize,
    out: &mut Vec<Vec<usize>>,
) {
    if p.is_empty() {
        if x.is_empty() && r.len() >= min_size.max(1) {
            out.push(r.clone());
        }
        return;
    }
    if r.len() + p.len() < min_size {
        return;
    }
    let pivot = *p
        .union(&x)
        .max_by_key(|&&u| (p.intersection(&adj[u]).count(), std::cmp::Reverse(u)))
        .expect("p is non-empty");
    let candidates: Vec<usize> = p.difference(&adj[pivot]).copied().collect();
    for v in candidates {
        let np: BTreeSet<usize> = p.intersection(&adj[v]).copied().collect();
        let nx: BTreeSet<usize> = x.intersection(&adj[v]).copied().collect();
        r.push(v);
        expand(adj, r, np, nx, min_size, out);
        r.pop();
        p.remove(&v);
        x.insert(v);
    }
}

/// Sum of `s_ij` over the pairs inside `clique`.
pub fn within_clique_sum(clique: &[usize], s: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for (a, &i) in clique.iter().enumerate() {
        for &j in &clique[a + 1..] {
            total += s[(i, j)];
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn rank_one_loading_sign() {
        let v = DVector::from_vec(vec![-0.6, 0.0, -0.8]);
        let l = &v * v.transpose();
        let a = loadings_from_l(&l, 1).unwrap();
        assert!((a.matrix().column(0) - (-&v)).amax() < 1e-12);
    }

    #[test]
    fn diagonal_loadings() {
        let l = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 0.0]));
        let a = loadings_from_l(&l, 2).unwrap();
        let expect = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((a.matrix() - expect).amax() < 1e-12);
    }

    #[test]
    fn loadings_reject_indefinite() {
        let l = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(loadings_from_l(&l, 1), Err(FlagError::NotPsd { .. })));
    }

    #[test]
    fn single_factor_is_not_rotated() {
        let a = DMatrix::from_column_slice(3, 1, &[0.3, -0.2, 0.9]);
        let r = varimax(&a).unwrap();
        assert_eq!(r.rotation, DMatrix::identity(1, 1));
        assert_eq!(r.rotated, a);
    }

    #[test]
    fn simple_structure_is_a_fixed_point() {
        let a = DMatrix::from_row_slice(4, 2, &[0.8, 0.0, 0.7, 0.0, 0.0, 0.6, 0.0, 0.9]);
        for kaiser in [true, false] {
            let r = varimax_with(&a, VarimaxOptions { kaiser, ..Default::default() }).unwrap();
            assert!((r.criterion - r.initial_criterion).abs() < 1e-10);
            let abs_t = r.rotation.map(f64::abs);
            let perm = abs_t.clone() - DMatrix::identity(2, 2);
            let swap = abs_t - DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
            assert!(perm.amax() < 1e-10 || swap.amax() < 1e-10, "{}", r.rotation);
        }
    }

    #[test]
    fn scores_are_loading_sums() {
        let data = BinaryDataset::from_rows(&[[0u8, 0, 0], [1, 0, 1]]).unwrap();
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
        let s = factor_scores(&a, &data).unwrap();
        assert_eq!(s.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(s.row(1).iter().copied().collect::<Vec<_>>(), vec![1.5, 0.5]);
        assert!(factor_scores(&DMatrix::zeros(2, 1), &data).is_err());
    }

    #[test]
    fn scale_key_parsing_and_correlation() {
        let key = ScaleKey::read_csv("item_index,scale_label,reverse_flag\n1,P,0\n2,E,1\n3,P,0\n".as_bytes()).unwrap();
        assert_eq!(key.labels(), vec!["E".to_string(), "P".to_string()]);
        assert!(key.reverse_scored.contains(&1));
        assert!(ScaleKey::read_csv("1,P\n1,E\n".as_bytes()).is_err());

        let data = BinaryDataset::from_rows(&[[1u8, 0, 1], [0, 1, 0], [1, 1, 0], [0, 0, 0]]).unwrap();
        let totals_p: Vec<f64> = data.rows().map(|r| (r[0] + r[2]) as f64).collect();
        let scores = DMatrix::from_column_slice(4, 1, &totals_p);
        let table = scale_correlations(&scores, &key, &data).unwrap();
        assert!((table.values[0][1].unwrap() - 1.0).abs() < 1e-12);

        let flat = DMatrix::from_element(4, 1, 2.0);
        let table = scale_correlations(&flat, &key, &data).unwrap();
        assert!(table.values[0][0].is_none());
    }

    #[test]
    fn cliques_small_graphs() {
        assert_eq!(maximal_cliques(&[(0, 1), (0, 2), (1, 2)], 3, 3).unwrap(), vec![vec![0, 1, 2]]);
        assert_eq!(maximal_cliques(&[(0, 1), (1, 2)], 3, 2).unwrap(), vec![vec![0, 1], vec![1, 2]]);
        assert_eq!(maximal_cliques(&[(0, 1)], 3, 1).unwrap(), vec![vec![0, 1], vec![2]]);
        assert!(maximal_cliques(&[(0, 5)], 3, 1).is_err());
    }

    #[test]
    fn clique_sum() {
        let mut s = DMatrix::zeros(3, 3);
        s[(0, 1)] = 0.5;
        s[(1, 0)] = 0.5;
        s[(1, 2)] = 0.25;
        s[(2, 1)] = 0.25;
        assert!((within_clique_sum(&[0, 1, 2], &s) - 0.75).abs() < 1e-15);
    }
}
