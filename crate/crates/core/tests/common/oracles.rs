//! Enumeration, Monte Carlo and quadrature oracles.

use gsn_core::eval::{enumerate_model_distribution, state_index};
use gsn_core::net::InitScheme;
use gsn_core::random::seeded;
use gsn_core::recon::{nade_sample, rnade_log_density, CondBiases, NadeParams, Recon, RnadeParams};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{perturb_all, random_cond, three_sigma};

/// Largest `|Σ_x P(x) − 1|` over `settings` random NADEs (random weights,
/// biases, conditioning and ordering; every fourth with an extra layer).
pub fn nade_normalization_error(d: usize, settings: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for s in 0..settings {
        let hidden = rng.random_range(1..=8);
        let extra = (s % 4 == 3).then_some(3);
        let mut p = NadeParams::new(d, hidden, extra, InitScheme::UniformFan, &mut rng);
        perturb_all(&mut p, &mut rng, 2.0);
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(&mut rng);
        p.set_ordering(order).unwrap();
        let cond = random_cond(&mut rng, hidden, d);
        let total: f64 = enumerate_model_distribution(&Recon::Nade(p), &cond, d)
            .unwrap()
            .iter()
            .sum();
        worst = worst.max((total - 1.0).abs());
    }
    worst
}

#[derive(Debug)]
pub struct SamplerCheck {
    pub draws: usize,
    /// Largest `|empirical − exact| / (3σ)` over outcomes; ≤ 1 passes.
    pub worst_ratio: f64,
    pub exact: Vec<f64>,
    pub empirical: Vec<f64>,
}

/// Ancestral NADE samples against the enumerated distribution.
pub fn nade_sampler_check(d: usize, draws: usize, seed: u64) -> SamplerCheck {
    let mut rng = seeded(seed);
    let hidden = 4;
    let mut p = NadeParams::new(d, hidden, None, InitScheme::UniformFan, &mut rng);
    perturb_all(&mut p, &mut rng, 1.5);
    let cond = random_cond(&mut rng, hidden, d);
    let exact = enumerate_model_distribution(&Recon::Nade(p.clone()), &cond, d).unwrap();
    let mut counts = vec![0usize; exact.len()];
    for _ in 0..draws {
        counts[state_index(&nade_sample(&p, &cond, &mut rng).unwrap())] += 1;
    }
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let worst_ratio = exact
        .iter()
        .zip(&empirical)
        .map(|(&q, &e)| (e - q).abs() / three_sigma(q, draws))
        .fold(0.0, f64::max);
    SamplerCheck {
        draws,
        worst_ratio,
        exact,
        empirical,
    }
}

/// `∫ P(x | cond) dx` for a 1-D or 2-D RNADE by composite Simpson's rule on
/// `[-lim, lim]^d` with `n` (even) intervals per axis.
pub fn rnade_integral(p: &RnadeParams, cond: &CondBiases, lim: f64, n: usize) -> f64 {
    assert!(n.is_multiple_of(2) && (1..=2).contains(&p.n_dims()));
    let h = 2.0 * lim / n as f64;
    let w = |i: usize| match i {
        0 => 1.0,
        i if i == n => 1.0,
        i if i % 2 == 1 => 4.0,
        _ => 2.0,
    };
    let at = |i: usize| -lim + i as f64 * h;
    if p.n_dims() == 1 {
        (0..=n)
            .map(|i| w(i) * rnade_log_density(p, cond, &[at(i)]).unwrap().exp())
            .sum::<f64>()
            * h
            / 3.0
    } else {
        let mut total = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                total += w(i) * w(j) * rnade_log_density(p, cond, &[at(i), at(j)]).unwrap().exp();
            }
        }
        total * h * h / 9.0
    }
}

pub fn random_rnade(d: usize, hidden: usize, k: usize, seed: u64) -> (RnadeParams, CondBiases) {
    let mut rng = seeded(seed);
    let mut p = RnadeParams::new(d, hidden, k, InitScheme::UniformFan, &mut rng).unwrap();
    perturb_all(&mut p, &mut rng, 0.5);
    let cond = random_cond(&mut rng, hidden, p.cond_output_len());
    (p, cond)
}
