#![allow(dead_code)]

use gsn_core::corruption::{CorruptionSpec, NoiseLevel};
use gsn_core::gsn::{GsnModel, ModelSpec};
use gsn_core::net::InitScheme;
use gsn_core::random::seeded;
use gsn_core::recon::{CondBiases, ReconKind};
use gsn_core::tensor::Params;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Relative error between two gradient vectors, `‖a − n‖ / max(‖a‖, ‖n‖)`;
/// vectors that are both (numerically) zero compare equal.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-9 {
        diff
    } else {
        diff / scale
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Worst per-tensor relative error of `analytic` against central differences
/// of `f` over every parameter of `params`, with the offending tensor name.
pub fn check_params<P: Params>(params: &P, analytic: &P, f: impl Fn(&P) -> f64) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = analytic
        .tensors()
        .into_iter()
        .map(|(_, t)| t.as_slice().to_vec())
        .collect();
    for (ti, name) in names.iter().enumerate() {
        let mut probe = params.clone();
        let len = probe.tensors()[ti].1.len();
        let mut numeric = Vec::with_capacity(len);
        for j in 0..len {
            let orig = probe.tensors()[ti].1.as_slice()[j];
            probe.tensors_mut()[ti].1.as_mut_slice()[j] = orig + FD_STEP;
            let up = f(&probe);
            probe.tensors_mut()[ti].1.as_mut_slice()[j] = orig - FD_STEP;
            let down = f(&probe);
            probe.tensors_mut()[ti].1.as_mut_slice()[j] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        let e = rel_err(&grads[ti], &numeric);
        if e > worst.0 || worst.1.is_empty() {
            worst = (e, name.clone());
        }
    }
    worst
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_binary<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| f64::from(u8::from(rng.random::<bool>())))
        .collect()
}

pub fn random_cond<R: Rng>(rng: &mut R, hidden: usize, out: usize) -> CondBiases {
    CondBiases {
        c: random_vec(rng, hidden, 1.0),
        b: random_vec(rng, out, 1.0),
    }
}

/// Random parameters, including biases, for gradient checks.
pub fn perturb_all<P: Params, R: Rng>(p: &mut P, rng: &mut R, scale: f64) {
    for (_, t) in p.tensors_mut() {
        for v in t.as_mut_slice() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

pub fn binary_model(recon: ReconKind, d: usize, level: f64, seed: u64) -> GsnModel {
    let mut spec = ModelSpec::new(
        recon,
        d,
        CorruptionSpec::SaltPepper {
            level: NoiseLevel::Fixed(level),
        },
    );
    spec.hidden = 8;
    spec.nade_hidden = 6;
    GsnModel::new(spec, &mut seeded(seed)).unwrap()
}

pub fn zero_model(recon: ReconKind, d: usize, corruption: CorruptionSpec) -> GsnModel {
    let mut spec = ModelSpec::new(recon, d, corruption);
    spec.init = InitScheme::Zeros;
    spec.hidden = 4;
    spec.nade_hidden = 3;
    GsnModel::new(spec, &mut seeded(0)).unwrap()
}

/// Three-sigma half-width of a binomial proportion.
pub fn three_sigma(p: f64, n: usize) -> f64 {
    3.0 * (p * (1.0 - p) / n as f64).sqrt()
}
pub mod gradcheck;
pub mod oracles;
pub mod twomode;
