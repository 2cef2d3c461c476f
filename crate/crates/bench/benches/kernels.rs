use criterion::{criterion_group, criterion_main, Criterion};
use gnhmm::babble::{cccp_minimize, CccpProblem, CccpStats};
use gnhmm::enhancer::{laplace_weight, map_gains, GainPriors};
use gnhmm::gig::{gig_moments, GigParams};
use gnhmm_bench::{babble_model, speech_model};
use ndarray::{Array1, Array2};
use std::hint::black_box;

fn special(c: &mut Criterion) {
    let params = GigParams::new(-80.5, 2.0, 150.0).unwrap();
    c.bench_function("gig_moments", |b| b.iter(|| gig_moments(black_box(&params)).unwrap()));
}

fn emissions(c: &mut Criterion) {
    let speech = speech_model();
    let babble = babble_model(&speech);
    let obs = Array1::from_shape_fn(speech.n_bins(), |k| 0.05 + 0.01 * (k % 7) as f64);
    c.bench_function("speech_state_loglik_55x161", |b| b.iter(|| speech.state_loglik(0.07, black_box(obs.view())).unwrap()));
    c.bench_function("babble_state_loglik_10x161", |b| {
        b.iter(|| babble.state_loglik(speech.basis.view(), 0.07, black_box(obs.view())).unwrap())
    });
    let power = Array2::from_shape_fn((speech.n_bins(), 200), |(k, t)| 0.05 + 0.01 * ((k + t) % 9) as f64);
    let ll = speech.loglik_matrix(0.07, power.view()).unwrap();
    c.bench_function("forward_backward_55x200", |b| b.iter(|| speech.forward_backward(black_box(ll.view())).unwrap()));
}

fn cccp(c: &mut Criterion) {
    let speech = speech_model();
    let shape = Array1::ones(speech.n_bins());
    let weights = Array1::from_shape_fn(speech.n_states(), |i| 0.5 + (i % 5) as f64 * 0.2);
    let stats = CccpStats { occupancy: 40.0, weighted_obs: speech.basis.dot(&weights) * 40.0 };
    let problem = CccpProblem { basis: speech.basis.view(), shape: shape.view(), stats: &stats };
    let start = Array1::ones(speech.n_states());
    c.bench_function("cccp_minimize_55_states", |b| b.iter(|| cccp_minimize(black_box(start.view()), &problem, 20).unwrap()));
}

fn map(c: &mut Criterion) {
    let speech = speech_model();
    let babble = babble_model(&speech);
    let u = speech.basis.column(4).to_owned();
    let v = babble.columns(speech.basis.view()).column(2).to_owned();
    let power = (&u * 0.9 + &v * 1.1).mapv(|p| p * 0.8);
    let pri = GainPriors { speech_shape: 15.0, speech_level: 0.07, babble_shape: 15.0, babble_level: 0.07 };
    c.bench_function("map_gains_and_laplace_161", |b| {
        b.iter(|| {
            let m = map_gains(black_box(power.view()), u.view(), v.view(), &pri, 1e-8, 50);
            laplace_weight(power.view(), u.view(), v.view(), m.speech, m.babble, &pri)
        })
    });
}

criterion_group!(kernels, special, emissions, cccp, map);
criterion_main!(kernels);
