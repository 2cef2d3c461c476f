//! Exhaustive grid searches over two variables.

/// Minimizer of `f` over [lo, hi]²: a coarse sweep followed by a fine sweep
/// around the best coarse cell.
pub fn argmin_2d(f: impl Fn(f64, f64) -> f64, lo: f64, hi: f64, coarse: f64, fine: f64) -> (f64, f64) {
    let sweep = |x0: f64, x1: f64, y0: f64, y1: f64, step: f64| {
        let nx = ((x1 - x0) / step).round() as usize;
        let ny = ((y1 - y0) / step).round() as usize;
        let mut best = (f64::INFINITY, x0, y0);
        for i in 0..=nx {
            let x = x0 + step * i as f64;
            for j in 0..=ny {
                let y = y0 + step * j as f64;
                let v = f(x, y);
                if v < best.0 {
                    best = (v, x, y);
                }
            }
        }
        best
    };
    let (_, cx, cy) = sweep(lo, hi, lo, hi, coarse);
    let r = 2.0 * coarse;
    let (_, x, y) = sweep((cx - r).max(lo), (cx + r).min(hi), (cy - r).max(lo), (cy + r).min(hi), fine);
    (x, y)
}

/// Maximizer of `f` on an n×n grid that is uniform in ln x and ln y.
pub fn argmax_log_grid(f: impl Fn(f64, f64) -> f64, x_range: (f64, f64), y_range: (f64, f64), n: usize) -> (f64, f64, f64) {
    let lx = (x_range.0.ln(), x_range.1.ln());
    let ly = (y_range.0.ln(), y_range.1.ln());
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..n {
        let x = (lx.0 + (lx.1 - lx.0) * i as f64 / (n - 1) as f64).exp();
        for j in 0..n {
            let y = (ly.0 + (ly.1 - ly.0) * j as f64 / (n - 1) as f64).exp();
            let v = f(x, y);
            if v > best.0 {
                best = (v, x, y);
            }
        }
    }
    (best.1, best.2, best.0)
}
