//! Hidden-Markov posteriors by enumerating every state path.

pub struct Enumerated {
    pub posteriors: Vec<Vec<f64>>,
    pub pair_counts: Vec<Vec<f64>>,
    pub loglik: f64,
}

/// Exact posteriors for a small chain; cost is Nᵀ.
pub fn enumerate(trans: &[Vec<f64>], initial: &[f64], loglik: &[Vec<f64>]) -> Enumerated {
    let n = initial.len();
    let t_len = loglik.len();
    let offset: Vec<f64> = loglik.iter().map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
    let mut posteriors = vec![vec![0.0; n]; t_len];
    let mut pair_counts = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    let count = n.pow(t_len as u32);
    for code in 0..count {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % n;
            c /= n;
        }
        let mut w = initial[path[0]] * (loglik[0][path[0]] - offset[0]).exp();
        for t in 1..t_len {
            w *= trans[path[t - 1]][path[t]] * (loglik[t][path[t]] - offset[t]).exp();
        }
        total += w;
        for t in 0..t_len {
            posteriors[t][path[t]] += w;
        }
        for t in 1..t_len {
            pair_counts[path[t - 1]][path[t]] += w;
        }
    }
    for row in posteriors.iter_mut().chain(pair_counts.iter_mut()) {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Enumerated { posteriors, pair_counts, loglik: total.ln() + offset.iter().sum::<f64>() }
}
