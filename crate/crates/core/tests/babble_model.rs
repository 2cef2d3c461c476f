use gnhmm::babble::{cccp_minimize, cccp_step, train_babble, BabbleNhmm, BabbleTrainConfig, CccpProblem, CccpStats, MONOTONE_TOL};
use gnhmm::corpus::{synthetic_speech_model, SpeechGenConfig};
use gnhmm_oracle::{grid, stats};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Array1<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(lo..hi))
}

#[test]
fn state_loglik_matches_gain_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = rng.random_range(1..=4);
        let n = rng.random_range(1..=3);
        let basis = rand_mat(&mut rng, k, n, 0.1, 3.0);
        let values = rand_mat(&mut rng, n, 2, 0.0, 2.0);
        let shape = rand_vec(&mut rng, k, 0.5, 4.0);
        let gain_shape = rng.random_range(1.0..30.0);
        let level = 10f64.powf(rng.random_range(-2.0..1.0));
        let m = BabbleNhmm::new(Array2::from_elem((2, 2), 0.5), values, shape.clone(), gain_shape, basis.view()).unwrap();
        let obs = rand_vec(&mut rng, k, 0.01, 5.0);
        let got = m.state_loglik(basis.view(), level, obs.view()).unwrap();
        let cols = m.columns(basis.view());
        for j in 0..2 {
            let want = stats::gamma_marginal_loglik(obs.as_slice().unwrap(), shape.as_slice().unwrap(), &cols.column(j).to_vec(), gain_shape, level);
            let e = (got[j] - want).abs() / want.abs().max(1.0);
            worst = worst.max(e);
            assert!(e < 1e-6, "{} vs {want}", got[j]);
        }
    }
    eprintln!("worst relative error {worst:e}");
}

struct Instance {
    basis: Array2<f64>,
    shape: Array1<f64>,
    stats: CccpStats,
}

/// Statistics whose per-bin optima sit near `center`, perturbed so the joint
/// optimum is not exact.
fn instance(rng: &mut ChaCha8Rng, k: usize, n: usize, center: &Array1<f64>) -> Instance {
    let basis = rand_mat(rng, k, n, 0.2, 2.0);
    let shape = rand_vec(rng, k, 0.5, 3.0);
    let w = rng.random_range(1.0..50.0);
    let bx = basis.dot(center);
    let s: Array1<f64> = (0..k).map(|i| shape[i] * w * bx[i] * rng.random_range(0.7..1.3)).collect();
    Instance { basis, shape, stats: CccpStats { occupancy: w, weighted_obs: s } }
}

impl Instance {
    fn problem(&self) -> CccpProblem<'_> {
        CccpProblem { basis: self.basis.view(), shape: self.shape.view(), stats: &self.stats }
    }
}

#[test]
fn gradient_and_hessian_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.random_range(1..=5);
        let c = rand_vec(&mut rng, n, 0.5, 3.0);
        let inst = instance(&mut rng, 7, n, &c);
        let p = inst.problem();
        let x = rand_vec(&mut rng, n, 0.3, 4.0);
        let anchor = p.concave_gradient(rand_vec(&mut rng, n, 0.3, 4.0).view());
        let g = p.surrogate_gradient(x.view(), anchor.view());
        let h = p.surrogate_hessian(x.view());
        for i in 0..n {
            let step = 1e-5 * x[i];
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += step;
            xm[i] -= step;
            let fd = (p.surrogate(xp.view(), anchor.view()) - p.surrogate(xm.view(), anchor.view())) / (2.0 * step);
            let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!((fd - g[i]).abs() < 1e-5 * scale, "grad {i}: {fd} vs {}", g[i]);
            let gd = (&p.surrogate_gradient(xp.view(), anchor.view()) - &p.surrogate_gradient(xm.view(), anchor.view())) / (2.0 * step);
            let hs = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for j in 0..n {
                assert!((gd[j] - h[[i, j]]).abs() < 1e-4 * hs, "hess {i},{j}: {} vs {}", gd[j], h[[i, j]]);
            }
        }
        // the Hessian of the convex part is positive semidefinite
        for _ in 0..10 {
            let d = rand_vec(&mut rng, n, -1.0, 1.0);
            assert!(d.dot(&h.dot(&d)) >= -1e-12 * hs_norm(&h));
        }
    }
}

fn hs_norm(h: &Array2<f64>) -> f64 {
    h.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[test]
fn concave_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 4;
    let c = rand_vec(&mut rng, n, 0.5, 3.0);
    let inst = instance(&mut rng, 6, n, &c);
    let p = inst.problem();
    let x = rand_vec(&mut rng, n, 0.3, 4.0);
    let g = p.concave_gradient(x.view());
    for i in 0..n {
        let step = 1e-5 * x[i];
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += step;
        xm[i] -= step;
        let fd = (p.concave_part(xp.view()) - p.concave_part(xm.view())) / (2.0 * step);
        assert!((fd - g[i]).abs() < 1e-5 * g[i].abs());
    }
}

#[test]
fn cccp_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for case in 0..50 {
        // some centres touch the boundary so that box constraints bind
        let mut c = rand_vec(&mut rng, 2, 0.5, 8.0);
        if case % 5 == 0 {
            c[case % 2] = 0.0;
        }
        let inst = instance(&mut rng, 4, 2, &c);
        let p = inst.problem();
        let x0 = Array1::from(vec![5.0, 5.0]);
        let mut x = x0.clone();
        let mut value = p.neg_q(x.view());
        for _ in 0..500 {
            let next = cccp_step(x.view(), &p).unwrap().x;
            let v = p.neg_q(next.view());
            assert!(v <= value + 1e-10, "−Q rose from {value} to {v}");
            assert!(next.iter().all(|v| *v >= 0.0));
            assert!(inst.basis.dot(&next).iter().all(|v| *v > 0.0));
            let moved = (&next - &x).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            x = next;
            value = v;
            if moved < 1e-12 {
                break;
            }
        }
        let f = |a: f64, b: f64| p.neg_q(Array1::from(vec![a, b]).view());
        let (ga, gb) = grid::argmin_2d(f, 0.0, 20.0, 0.02, 1e-4);
        assert!(ga.max(gb) < 20.0 - 1e-9, "case {case}: grid optimum on the window edge");
        let d = (x[0] - ga).abs().max((x[1] - gb).abs());
        worst = worst.max(d);
        assert!(d <= 2e-4, "case {case}: cccp {x} vs grid ({ga}, {gb})");
        assert!(value <= f(ga, gb) + 1e-10 * value.abs());
    }
    eprintln!("worst distance to grid minimiser {worst:e}");
}

#[test]
fn minimize_from_optimum_stays() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inst = instance(&mut rng, 5, 3, &Array1::from(vec![1.0, 2.0, 0.5]));
    let p = inst.problem();
    let x = cccp_minimize(Array1::from(vec![1.0, 1.0, 1.0]).view(), &p, 2000).unwrap().x;
    let again = cccp_step(x.view(), &p).unwrap().x;
    assert!((&again - &x).iter().all(|v| v.abs() < 1e-8));
}

fn draw_babble(basis: &Array2<f64>, weights: &[Array1<f64>], shape: f64, gain_shape: f64, level: f64, frames: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = Gamma::new(gain_shape, level).unwrap();
    let k = basis.nrows();
    let mut out = Array2::zeros((k, frames));
    for t in 0..frames {
        let w = &weights[(t / 20) % weights.len()];
        let h = gain.sample(&mut rng);
        let col = basis.dot(w);
        for i in 0..k {
            out[[i, t]] = Gamma::new(shape, h * col[i]).unwrap().sample(&mut rng);
        }
    }
    out
}

#[test]
fn single_source_concentrates_on_its_state() {
    let gen = SpeechGenConfig { n_states: 4, n_bins: 33, model_seed: 9, ..Default::default() };
    let speech = synthetic_speech_model(&gen).unwrap();
    for j in 0..4 {
        let mut w = Array1::zeros(4);
        w[j] = 1.0;
        let data = draw_babble(&speech.basis, &[w], 1.0, 15.0, gen.level, 400, 40 + j as u64);
        let cfg = BabbleTrainConfig { n_states: 1, n_iters: 10, ..Default::default() };
        let fit = train_babble(&[data], &speech, &cfg, None).unwrap();
        let s = fit.model.state_values.column(0);
        assert!(s[j] > 0.5 * s.sum(), "state {j}: {s}");
    }
}

#[test]
fn single_state_reproduces_weight_profile() {
    let gen = SpeechGenConfig { n_states: 3, n_bins: 33, model_seed: 12, spread_db: 15.0, ..Default::default() };
    let speech = synthetic_speech_model(&gen).unwrap();
    let w = Array1::from(vec![0.5, 0.3, 0.2]);
    let corpus: Vec<Array2<f64>> = (0..3).map(|r| draw_babble(&speech.basis, &[w.clone()], 1.0, 15.0, 0.05, 600, 70 + r)).collect();
    let cfg = BabbleTrainConfig { n_states: 1, n_iters: 15, ..Default::default() };
    let fit = train_babble(&corpus, &speech, &cfg, None).unwrap();
    let s = fit.model.state_values.column(0);
    let s = &s / s.sum();
    for i in 0..3 {
        assert!((s[i] - w[i]).abs() < 0.15 * w[i], "{s} vs {w}");
    }
}

#[test]
fn training_trace_is_monotone() {
    let gen = SpeechGenConfig { n_states: 4, n_bins: 33, model_seed: 2, ..Default::default() };
    let speech = synthetic_speech_model(&gen).unwrap();
    let weights = [Array1::from(vec![1.0, 0.5, 0.0, 0.2]), Array1::from(vec![0.1, 0.1, 1.0, 0.6]), Array1::from(vec![0.0, 0.8, 0.3, 0.0])];
    let corpus: Vec<Array2<f64>> = (0..2).map(|r| draw_babble(&speech.basis, &weights, 1.0, 15.0, 0.05, 500, 90 + r)).collect();
    let cfg = BabbleTrainConfig { n_states: 3, n_iters: 15, ..Default::default() };
    let fit = train_babble(&corpus, &speech, &cfg, None).unwrap();
    assert_eq!(fit.loglik_trace.len(), 16);
    for w in fit.loglik_trace.windows(2) {
        assert!(w[1] >= w[0] - MONOTONE_TOL * w[0].abs(), "{:?}", fit.loglik_trace);
    }
    assert_eq!(fit.violations, 0);
    assert_eq!(fit.cccp_iterations.len(), 15);
}
