//! Unit-test helpers: the finite-difference gradient oracle and tolerance
//! utilities. Kept independent of the backpropagation code it checks.

use rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    crate::rng::seeded_rng(seed, 0xF00D_0000 + stream)
}

/// Central finite differences of `f` at `params` with the given step.
pub fn fd_grad<F: FnMut(&[f64]) -> f64>(params: &[f64], step: f64, mut f: F) -> Vec<f64> {
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    grad
}

/// Worst relative disagreement between two gradient vectors. Entries where
/// both sides are below 1e-8 in magnitude count as agreeing.
pub fn max_rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    assert_eq!(analytic.len(), fd.len());
    let mut worst: f64 = 0.0;
    for (&a, &f) in analytic.iter().zip(fd) {
        let diff = (a - f).abs();
        if diff < 1e-8 {
            continue;
        }
        let denom = a.abs().max(f.abs()).max(1e-8);
        worst = worst.max(diff / denom);
    }
    worst
}
