//! Reference densities and integrals for the model tests.

use crate::quad::{integrate, log_integral_exp, weighted_mean};

/// Lanczos (g = 7, n = 9) ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Log gamma density with shape `k` and scale `s`.
pub fn ln_gamma_pdf(x: f64, k: f64, s: f64) -> f64 {
    (k - 1.0) * x.ln() - x / s - k * s.ln() - ln_gamma(k)
}

/// K_ν(x) from ∫₀^∞ e^{−x cosh t} cosh(νt) dt.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    let upper = upper_limit(nu, x);
    integrate(|t| (-x * t.cosh()).exp() * (nu * t).cosh(), 0.0, upper, 0.0, 1e-13)
}

/// ∂K_ν(x)/∂ν from ∫₀^∞ e^{−x cosh t}·t·sinh(νt) dt.
pub fn bessel_k_order_derivative(nu: f64, x: f64) -> f64 {
    let upper = upper_limit(nu, x);
    integrate(|t| (-x * t.cosh()).exp() * t * (nu * t).sinh(), 0.0, upper, 0.0, 1e-13)
}

fn upper_limit(nu: f64, x: f64) -> f64 {
    let mut t = 1.0;
    while -x * f64::cosh(t) + nu.abs() * t + t.ln().max(0.0) > -60.0 - x {
        t += 0.5;
    }
    t
}

/// GIG moments (E G, E 1/G, E ln G) by quadrature over u = ln g.
pub fn gig_moments(order: f64, rate: f64, tau: f64) -> [f64; 3] {
    let log_kernel = move |m: f64| move |u: f64| (order + m) * u - rate * u.exp() - tau * (-u).exp();
    let hint = |m: f64| {
        let o = order + m;
        let peak = ((o + (o * o + 4.0 * rate * tau).sqrt()) / (2.0 * rate)).ln();
        let curv = (rate * peak.exp() + tau * (-peak).exp()).max(1e-12);
        let w = 1.0 / curv.sqrt();
        (peak - 8.0 * w, peak + 8.0 * w)
    };
    let z0 = {
        let (a, b) = hint(0.0);
        log_integral_exp(log_kernel(0.0), a, b)
    };
    let z_plus = {
        let (a, b) = hint(1.0);
        log_integral_exp(log_kernel(1.0), a, b)
    };
    let z_minus = {
        let (a, b) = hint(-1.0);
        log_integral_exp(log_kernel(-1.0), a, b)
    };
    let (a, b) = hint(0.0);
    let mean_ln = weighted_mean(log_kernel(0.0), |u| u, a, b);
    [(z_plus - z0).exp(), (z_minus - z0).exp(), mean_ln]
}

/// ln ∫ Π_k Gamma(o_k; shape_k, g·scale_k) · Gamma(g; gain_shape, gain_scale) dg.
pub fn gamma_marginal_loglik(obs: &[f64], shape: &[f64], scale: &[f64], gain_shape: f64, gain_scale: f64) -> f64 {
    let f = |u: f64| {
        let g = u.exp();
        let mut acc = ln_gamma_pdf(g, gain_shape, gain_scale) + u;
        for k in 0..obs.len() {
            acc += ln_gamma_pdf(obs[k], shape[k], g * scale[k]);
        }
        acc
    };
    let centre = (gain_shape * gain_scale).ln();
    log_integral_exp(f, centre - 30.0, centre + 30.0)
}

/// ln ∫∫ exp(f_log(u, v)) du dv over a plane, nested one-dimensional.
pub fn log_integral_exp_2d(f_log: impl Fn(f64, f64) -> f64, u_hint: (f64, f64), v_hint: (f64, f64)) -> f64 {
    let inner = |u: f64| log_integral_exp(|v| f_log(u, v), v_hint.0, v_hint.1);
    log_integral_exp(inner, u_hint.0, u_hint.1)
}
