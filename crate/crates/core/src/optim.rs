//! Dense BFGS with a strong-Wolfe line search.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Stop once `‖∇f‖_∞` falls below this.
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final inverse-Hessian approximation, reusable as a warm start.
    pub inv_hessian: DMatrix<f64>,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

/// Minimizes `f`, where `f(x, g)` returns the value and writes the gradient
/// into `g`. `inv_hessian0` seeds the inverse-Hessian approximation.
pub fn minimize<F>(
    mut f: F,
    x0: DVector<f64>,
    inv_hessian0: Option<DMatrix<f64>>,
    opts: BfgsOptions,
) -> BfgsResult
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = DVector::zeros(n);
    let mut fx = f(&x, &mut g);
    let mut h = inv_hessian0.unwrap_or_else(|| DMatrix::identity(n, n));
    let mut scaled_initial = false;
    let mut iterations = 0;

    let mut best_x = x.clone();
    let mut best_f = fx;
    let mut best_gn = g.amax();

    while iterations < opts.max_iter {
        let gn = g.amax();
        if gn <= opts.grad_tol || n == 0 {
            return BfgsResult {
                x,
                value: fx,
                grad_norm: gn,
                iterations,
                converged: true,
                inv_hessian: h,
            };
        }
        iterations += 1;

        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = -g.norm_squared();
        }

        let Some((alpha, x_new, f_new, g_new)) = line_search(&mut f, &x, fx, &dir, slope) else {
            if scaled_initial || h == DMatrix::identity(n, n) {
                break;
            }
            // retry once from a fresh steepest-descent model
            h = DMatrix::identity(n, n);
            scaled_initial = true;
            continue;
        };

        let s = &dir * alpha;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        x = x_new;
        fx = f_new;
        g = g_new;

        if fx < best_f || (fx == best_f && g.amax() < best_gn) {
            best_f = fx;
            best_x = x.clone();
            best_gn = g.amax();
        }

        if sy > 1e-12 * s.norm() * y.norm() {
            if !scaled_initial && iterations == 1 && h == DMatrix::identity(n, n) {
                h *= sy / y.norm_squared();
                scaled_initial = true;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← H + (sᵀy + yᵀHy)(ssᵀ)/(sᵀy)² − (Hy sᵀ + s yᵀH)/sᵀy
            h.ger(rho * rho * (sy + yhy), &s, &s, 1.0);
            h.ger(-rho, &hy, &s, 1.0);
            h.ger(-rho, &s, &hy, 1.0);
        }
    }

    let gn = g.amax();
    if fx <= best_f {
        best_x = x;
        best_f = fx;
        best_gn = gn;
    }
    BfgsResult {
        x: best_x,
        value: best_f,
        grad_norm: best_gn,
        iterations,
        converged: best_gn <= opts.grad_tol,
        inv_hessian: h,
    }
}

type Step = (f64, DVector<f64>, f64, DVector<f64>);

fn line_search<F>(
    f: &mut F,
    x: &DVector<f64>,
    f0: f64,
    dir: &DVector<f64>,
    slope0: f64,
) -> Option<Step>
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    let mut eval = |alpha: f64| {
        let xa = x + dir * alpha;
        let mut ga = DVector::zeros(x.len());
        let fa = f(&xa, &mut ga);
        let slope = ga.dot(dir);
        (xa, fa, ga, slope)
    };

    let mut lo = 0.0;
    let mut f_lo = f0;
    let mut slope_lo = slope0;
    let mut alpha = 1.0;
    let mut prev_alpha = 0.0;
    let mut prev_f = f0;
    let mut hi: Option<(f64, f64, f64)> = None;

    for k in 0..30 {
        let (xa, fa, ga, sa) = eval(alpha);
        if !fa.is_finite() {
            hi = Some((alpha, f64::INFINITY, 0.0));
            break;
        }
        if fa > f0 + C1 * alpha * slope0 || (k > 0 && fa >= prev_f) {
            hi = Some((alpha, fa, sa));
            break;
        }
        if sa.abs() <= -C2 * slope0 {
            return Some((alpha, xa, fa, ga));
        }
        if sa >= 0.0 {
            hi = Some((prev_alpha, prev_f, slope_lo));
            lo = alpha;
            f_lo = fa;
            slope_lo = sa;
            break;
        }
        lo = alpha;
        f_lo = fa;
        slope_lo = sa;
        prev_alpha = alpha;
        prev_f = fa;
        alpha *= 2.0;
    }

    let (mut a_hi, mut f_hi, mut s_hi) = hi?;
    let mut a_lo = lo;
    for _ in 0..40 {
        let trial = cubic_min(a_lo, f_lo, slope_lo, a_hi, f_hi, s_hi);
        let (xa, fa, ga, sa) = eval(trial);
        if !fa.is_finite() || fa > f0 + C1 * trial * slope0 || fa >= f_lo {
            a_hi = trial;
            f_hi = fa;
            s_hi = sa;
        } else {
            if sa.abs() <= -C2 * slope0 {
                return Some((trial, xa, fa, ga));
            }
            if sa * (a_hi - a_lo) >= 0.0 {
                a_hi = a_lo;
                f_hi = f_lo;
                s_hi = slope_lo;
            }
            a_lo = trial;
            f_lo = fa;
            slope_lo = sa;
        }
        if (a_hi - a_lo).abs() < 1e-16 * a_lo.abs().max(1.0) {
            break;
        }
    }
    if a_lo > 0.0 && f_lo < f0 {
        let (xa, fa, ga, _) = eval(a_lo);
        return Some((a_lo, xa, fa, ga));
    }
    None
}

/// Minimizer of the cubic interpolant on `[a, b]`, safeguarded toward the
/// interval interior; falls back to bisection.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let width = right - left;
    let mid = 0.5 * (a + b);
    if !fb.is_finite() {
        return a + 0.1 * (b - a);
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    if t.is_finite() && t > left + 0.05 * width && t < right - 0.05 * width {
        t
    } else {
        mid
    }
}
