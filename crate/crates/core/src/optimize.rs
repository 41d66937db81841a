//! Small derivative-free numerical routines shared by the estimators and the
//! rate computations: 1-D bracketing and golden-section search, bisection,
//! box-constrained Nelder-Mead, a Halton start generator and a dense solver.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimization of a unimodal `f` on `[lo, hi]`.
///
/// Returns `(argmin, min)`. Stops when the bracket is narrower than
/// `tol * (1 + |x|)`.
pub fn golden_min<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..500 {
        if (hi - lo).abs() <= tol * (1.0 + x1.abs().max(x2.abs())) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Minimizes `f` on `[lo, hi]` by scanning a grid of `points` nodes (log-spaced
/// when `log_grid`), then refining the best interior node with golden-section
/// search.
///
/// Fails with [`Error::NoBracket`] when the best node is an endpoint, i.e. the
/// objective looks monotone over the range.
pub fn bracketed_min<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    points: usize,
    log_grid: bool,
    tol: f64,
) -> Result<(f64, f64)> {
    let points = points.max(3);
    let node = |i: usize| {
        let s = i as f64 / (points - 1) as f64;
        if log_grid {
            (lo.ln() + s * (hi.ln() - lo.ln())).exp()
        } else {
            lo + s * (hi - lo)
        }
    };
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..points {
        let v = f(node(i));
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    if best == 0 || best == points - 1 || !best_val.is_finite() {
        return Err(Error::NoBracket { lo, hi });
    }
    Ok(golden_min(f, node(best - 1), node(best + 1), tol))
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoBracket { lo, hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= tol {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Stopping rules for [`nelder_mead`].
#[derive(Debug, Clone, Copy)]
pub struct SimplexTolerance {
    pub ftol: f64,
    pub xtol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn clamp_into(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, &l), &u) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(l, u);
    }
}

/// Box-constrained Nelder-Mead. Trial points are clamped into the box.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    tol: SimplexTolerance,
) -> SimplexOutcome {
    let d = start.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    let mut x0 = start.to_vec();
    clamp_into(&mut x0, lower, upper);
    simplex.push(x0.clone());
    for i in 0..d {
        let mut xi = x0.clone();
        let width = upper[i] - lower[i];
        let step = if width.is_finite() { 0.05 * width } else { 0.5 };
        let step = step.max(1e-3);
        xi[i] = if xi[i] + step <= upper[i] { xi[i] + step } else { xi[i] - step };
        simplex.push(xi);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < tol.max_iter {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let fspread = if values[d].is_finite() {
            (values[d] - values[0]).abs()
        } else {
            f64::INFINITY
        };
        let xspread = simplex[1..]
            .iter()
            .flat_map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if fspread <= tol.ftol && xspread <= tol.xtol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; d];
        for x in &simplex[..d] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / d as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[d])
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            clamp_into(&mut p, lower, upper);
            p
        };

        let reflected = along(1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = along(2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[d] = expanded;
                values[d] = fe;
            } else {
                simplex[d] = reflected;
                values[d] = fr;
            }
            continue;
        }
        if fr < values[d - 1] {
            simplex[d] = reflected;
            values[d] = fr;
            continue;
        }
        let contracted = if fr < values[d] { along(0.5) } else { along(-0.5) };
        let fc = f(&contracted);
        if fc < values[d].min(fr) {
            simplex[d] = contracted;
            values[d] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=d {
            let shrunk: Vec<f64> = simplex[i]
                .iter()
                .zip(&best)
                .map(|(x, b)| b + 0.5 * (x - b))
                .collect();
            values[i] = f(&shrunk);
            simplex[i] = shrunk;
        }
    }
    let best = (0..=d)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    SimplexOutcome {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        converged,
    }
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// `count` points of the Halton sequence mapped into the box (index 1 onward,
/// so the first point is the box center in every coordinate).
pub fn halton_points(count: usize, lower: &[f64], upper: &[f64]) -> Vec<Vec<f64>> {
    (1..=count as u64)
        .map(|i| {
            lower
                .iter()
                .zip(upper)
                .enumerate()
                .map(|(j, (&l, &u))| l + radical_inverse(i, PRIMES[j % PRIMES.len()]) * (u - l))
                .collect()
        })
        .collect()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Numerical rank of the rows of `m` (modified Gram-Schmidt with relative
/// tolerance).
pub fn row_rank(m: &[Vec<f64>], tol: f64) -> usize {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for row in m {
        let mut v = row.clone();
        for q in &basis {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= dot * qi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
        if norm > tol * scale {
            basis.push(v.iter().map(|x| x / norm).collect());
        }
    }
    basis.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, v) = golden_min(|x| (x - 1.3).powi(2) + 2.0, -5.0, 5.0, 1e-12);
        assert!((x - 1.3).abs() < 1e-6);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bracketed_min_rejects_monotone_objective() {
        let err = bracketed_min(|x| x, 1e-6, 1e3, 50, true, 1e-10).unwrap_err();
        assert!(matches!(err, Error::NoBracket { .. }));
    }

    #[test]
    fn bisect_finds_root() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
        assert!(bisect(|x| x * x + 1.0, 0.0, 2.0, 1e-14).is_err());
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let tol = SimplexTolerance { ftol: 1e-14, xtol: 1e-9, max_iter: 20_000 };
        let out = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            tol,
        );
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_respects_box() {
        let tol = SimplexTolerance { ftol: 1e-14, xtol: 1e-10, max_iter: 10_000 };
        let out = nelder_mead(|x| (x[0] - 3.0).powi(2), &[0.0], &[-1.0], &[1.0], tol);
        assert!((out.x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn halton_points_are_scaled_radical_inverses() {
        let pts = halton_points(8, &[-2.0, 0.0], &[2.0, 1.0]);
        assert_eq!(pts[0], vec![0.0, 1.0 / 3.0]);
        assert_eq!(pts[1], vec![-1.0, 2.0 / 3.0]);
        assert!(pts.iter().all(|p| (-2.0..=2.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])));
    }

    #[test]
    fn dense_solve_and_rank() {
        let x = solve_dense(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        assert_eq!(row_rank(&[vec![1.0, 2.0], vec![2.0, 4.0]], 1e-10), 1);
        assert_eq!(row_rank(&[vec![1.0, 0.0], vec![1.0, 1.0]], 1e-10), 2);
    }
}
