//! Adaptive Gauss–Kronrod (7/15) quadrature.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// ∫ₐᵇ f with combined absolute/relative tolerance.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> f64 {
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;

    struct Piece(f64, f64, f64, f64);
    impl PartialEq for Piece {
        fn eq(&self, o: &Self) -> bool {
            self.3 == o.3
        }
    }
    impl Eq for Piece {}
    impl PartialOrd for Piece {
        fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Piece {
        fn cmp(&self, o: &Self) -> Ordering {
            self.3.total_cmp(&o.3)
        }
    }

    let (v, e) = kronrod(&f, a, b);
    let mut total = v;
    let mut err = e;
    let mut heap = BinaryHeap::from(vec![Piece(a, b, v, e)]);
    for _ in 0..5_000 {
        if err <= abs_tol.max(rel_tol * total.abs()) {
            break;
        }
        let Piece(lo, hi, v, e) = heap.pop().unwrap();
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod(&f, lo, mid);
        let (v2, e2) = kronrod(&f, mid, hi);
        total += v1 + v2 - v;
        err += e1 + e2 - e;
        heap.push(Piece(lo, mid, v1, e1));
        heap.push(Piece(mid, hi, v2, e2));
    }
    heap.iter().map(|p| p.2).sum()
}

/// Finds the peak of a unimodal log-integrand and the interval outside which
/// it has dropped by more than `drop` nats.
pub fn support(f_log: &impl Fn(f64) -> f64, lo_hint: f64, hi_hint: f64, drop: f64) -> (f64, f64, f64) {
    let n = 400;
    let step = (hi_hint - lo_hint) / n as f64;
    let mut best = (f64::NEG_INFINITY, lo_hint);
    for i in 0..=n {
        let u = lo_hint + step * i as f64;
        let v = f_log(u);
        if v > best.0 {
            best = (v, u);
        }
    }
    // polish the peak with a golden-section search on the bracketing cells
    let (mut a, mut b) = (best.1 - step, best.1 + step);
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - gr * (b - a);
        let d = a + gr * (b - a);
        if f_log(c) > f_log(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let peak_u = 0.5 * (a + b);
    let peak = f_log(peak_u).max(best.0);
    let walk = |dir: f64| {
        let mut s = step.max(1e-6);
        let mut u = peak_u;
        loop {
            u += dir * s;
            if f_log(u) < peak - drop || !f_log(u).is_finite() {
                return u;
            }
            s *= 1.5;
        }
    };
    (peak, walk(-1.0), walk(1.0))
}

/// ln ∫ exp(f_log(u)) du for a unimodal `f_log`, given a rough location.
pub fn log_integral_exp(f_log: impl Fn(f64) -> f64, lo_hint: f64, hi_hint: f64) -> f64 {
    let (peak, lo, hi) = support(&f_log, lo_hint, hi_hint, 80.0);
    let val = integrate(|u| (f_log(u) - peak).exp(), lo, hi, 0.0, 1e-13);
    peak + val.ln()
}

/// ∫ w(u)·exp(f_log(u)) du / ∫ exp(f_log(u)) du.
pub fn weighted_mean(f_log: impl Fn(f64) -> f64, w: impl Fn(f64) -> f64, lo_hint: f64, hi_hint: f64) -> f64 {
    let (peak, lo, hi) = support(&f_log, lo_hint, hi_hint, 90.0);
    let den = integrate(|u| (f_log(u) - peak).exp(), lo, hi, 0.0, 1e-13);
    let num = integrate(|u| w(u) * (f_log(u) - peak).exp(), lo, hi, 1e-300, 1e-13);
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_and_exponentials() {
        let v = integrate(|x| x * x, 0.0, 3.0, 0.0, 1e-13);
        assert!((v - 9.0).abs() < 1e-12);
        let g = log_integral_exp(|u| -0.5 * u * u, -3.0, 3.0);
        assert!((g - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }
}
