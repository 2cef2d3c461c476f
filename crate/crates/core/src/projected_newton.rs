//! Projected Newton for smooth convex objectives on the non-negative orthant.
//!
//! Variables that sit at (or within ε of) zero with a positive gradient are
//! held fixed; the remaining block takes a Newton step from a Cholesky solve.
//! Steps are accepted only on sufficient decrease, so the returned point is
//! never worse than the start.

use ndarray::{Array1, Array2, ArrayView1};

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: Array1<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Iterations that fell back to a projected-gradient step.
    pub gradient_steps: usize,
}

pub trait BoxObjective {
    /// Objective value; +∞ outside the domain.
    fn value(&self, x: ArrayView1<f64>) -> f64;
    fn gradient(&self, x: ArrayView1<f64>) -> Array1<f64>;
    fn hessian(&self, x: ArrayView1<f64>) -> Array2<f64>;
}

const ARMIJO: f64 = 1e-4;
const ACTIVE_EPS: f64 = 1e-12;

/// Solves A·y = b for symmetric positive-definite A, or `None` if the
/// factorisation breaks down.
pub fn cholesky_solve(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    let n = b.len();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[[i, k]] * y[k];
        }
        y[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[[k, i]] * y[k];
        }
        y[i] /= l[[i, i]];
    }
    Some(y)
}

fn project(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Newton direction on the free block, with diagonal damping if the reduced
/// Hessian is not numerically positive definite.
fn newton_direction(h: &Array2<f64>, g: &Array1<f64>, free: &[usize]) -> Option<Array1<f64>> {
    let m = free.len();
    let mut hf = Array2::zeros((m, m));
    let mut gf = Array1::zeros(m);
    for (a, &i) in free.iter().enumerate() {
        gf[a] = -g[i];
        for (b, &j) in free.iter().enumerate() {
            hf[[a, b]] = h[[i, j]];
        }
    }
    let scale = (0..m).map(|a| hf[[a, a]].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut damping = 0.0;
    for _ in 0..8 {
        let mut hd = hf.clone();
        for a in 0..m {
            hd[[a, a]] += damping;
        }
        if let Some(d) = cholesky_solve(&hd, &gf) {
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        damping = if damping == 0.0 { 1e-10 * scale } else { damping * 100.0 };
    }
    None
}

pub fn minimize(obj: &impl BoxObjective, x0: ArrayView1<f64>, max_iter: usize, tol: f64) -> SolveReport {
    let mut x = project(&x0.to_owned());
    let mut f = obj.value(x.view());
    let mut report = SolveReport { x: x.clone(), value: f, iterations: 0, gradient_steps: 0 };
    if !f.is_finite() {
        return report;
    }
    for iter in 0..max_iter {
        report.iterations = iter + 1;
        let g = obj.gradient(x.view());
        let pg = (&x - &project(&(&x - &g))).mapv(f64::abs);
        let pg_norm = pg.fold(0.0f64, |a, v| a.max(*v));
        if pg_norm <= tol * x.fold(1.0f64, |a, v| a.max(v.abs())) {
            break;
        }
        let eps = pg_norm.min(ACTIVE_EPS.max(1e-6 * pg_norm));
        let free: Vec<usize> = (0..x.len()).filter(|&i| !(x[i] <= eps && g[i] > 0.0)).collect();
        let h = obj.hessian(x.view());
        let mut accepted = None;
        if let Some(df) = newton_direction(&h, &g, &free) {
            let mut step = 1.0;
            while step > 1e-14 {
                let mut trial = x.clone();
                for (a, &i) in free.iter().enumerate() {
                    trial[i] += step * df[a];
                }
                for i in 0..x.len() {
                    if !free.contains(&i) {
                        trial[i] -= step * g[i] / h[[i, i]].max(f64::MIN_POSITIVE);
                    }
                }
                let trial = project(&trial);
                let ft = obj.value(trial.view());
                let predicted: f64 = g.iter().zip(trial.iter().zip(x.iter())).map(|(gi, (t, xi))| gi * (t - xi)).sum();
                if ft.is_finite() && ft <= f + ARMIJO * predicted.min(0.0) && ft <= f {
                    accepted = Some((trial, ft));
                    break;
                }
                step *= 0.5;
            }
        }
        if accepted.is_none() {
            report.gradient_steps += 1;
            let diag_max = (0..x.len()).map(|i| h[[i, i]]).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
            let mut step = 1.0 / diag_max;
            while step * pg_norm > 1e-300 && step > 1e-30 / diag_max {
                let trial = project(&(&x - &(step * &g)));
                let ft = obj.value(trial.view());
                let predicted: f64 = g.iter().zip(trial.iter().zip(x.iter())).map(|(gi, (t, xi))| gi * (t - xi)).sum();
                if ft.is_finite() && ft <= f + ARMIJO * predicted && ft <= f {
                    accepted = Some((trial, ft));
                    break;
                }
                step *= 0.5;
            }
        }
        match accepted {
            Some((xn, fn_)) => {
                let moved = (&xn - &x).fold(0.0f64, |a, v| a.max(v.abs()));
                let small = moved <= 1e-14 * x.fold(1e-300f64, |a, v| a.max(v.abs())) || f - fn_ <= 1e-16 * f.abs();
                x = xn;
                f = fn_;
                if small {
                    break;
                }
            }
            None => break,
        }
    }
    report.x = x;
    report.value = f;
    report
}
