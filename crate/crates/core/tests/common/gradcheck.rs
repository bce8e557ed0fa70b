//! Finite-difference gradient suites shared by the gradient tests and the
//! acceptance run.

use gsn_core::corruption::CorruptionSpec;
use gsn_core::gsn::{denoise_loss_and_grads, walkback_loss_and_grads, GsnModel, ModelSpec};
use gsn_core::net::{
    encoder_backward, encoder_forward, Activation, EncoderParams, EncoderShape, InitScheme,
};
use gsn_core::random::seeded;
use gsn_core::recon::{
    nade_gradients, nade_log_likelihood, rnade_gradients, rnade_log_density, CondBiases,
    FactorialGaussian, NadeParams, Recon, ReconKind, RnadeParams,
};
use gsn_core::tensor::{dot, Params};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    check_params, numeric_grad, perturb_all, random_binary, random_cond, random_vec, rel_err,
};

#[derive(Debug, Default)]
pub struct SuiteResult {
    pub instances: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl SuiteResult {
    fn record(&mut self, err: f64, at: impl FnOnce() -> String) {
        if err > self.worst || self.worst_at.is_empty() {
            self.worst = err;
            self.worst_at = at();
        }
    }
}

pub fn encoder_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut rng = seeded(seed);
    let mut out = SuiteResult::default();
    for inst in 0..instances {
        let n_dims = rng.random_range(1..=8);
        let shape = EncoderShape {
            n_dims,
            n_hidden: rng.random_range(1..=8),
            nade_hidden: rng.random_range(0..=5),
            n_out: rng.random_range(1..=8),
            condition_output: inst % 4 != 3,
            activation: if inst % 2 == 0 {
                Activation::Tanh
            } else {
                Activation::Sigmoid
            },
        };
        let mut p = EncoderParams::init(shape, InitScheme::UniformFan, &mut rng);
        perturb_all(&mut p, &mut rng, 0.5);
        let x: Vec<f64> = if inst % 3 == 0 {
            random_binary(&mut rng, n_dims)
        } else {
            random_vec(&mut rng, n_dims, 1.5)
        };
        let fwd = encoder_forward(&p, &x).unwrap();
        let r_c = random_vec(&mut rng, fwd.cond_c.len(), 1.0);
        let r_b = random_vec(&mut rng, fwd.cond_b.len(), 1.0);
        let loss = |p: &EncoderParams, x: &[f64]| {
            let o = encoder_forward(p, x).unwrap();
            dot(&r_c, &o.cond_c) + dot(&r_b, &o.cond_b)
        };
        let mut grads = p.zeros_like();
        let d_x = encoder_backward(&p, &fwd.cache, &r_c, &r_b, &mut grads).unwrap();
        let (e, name) = check_params(&p, &grads, |q| loss(q, &x));
        out.record(e, || format!("instance {inst}: {name}"));
        let e = rel_err(&d_x, &numeric_grad(&x, |xp| loss(&p, xp)));
        out.record(e, || format!("instance {inst}: input"));
        out.instances += 1;
    }
    out
}

pub fn nade_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut rng = seeded(seed);
    let mut out = SuiteResult::default();
    for inst in 0..instances {
        let d = rng.random_range(1..=8);
        let hidden = rng.random_range(1..=6);
        let extra = (inst % 3 == 2).then(|| rng.random_range(1..=4));
        let mut p = NadeParams::new(d, hidden, extra, InitScheme::UniformFan, &mut rng);
        perturb_all(&mut p, &mut rng, 0.5);
        if inst % 2 == 1 {
            let mut order: Vec<usize> = (0..d).collect();
            order.shuffle(&mut rng);
            p.set_ordering(order).unwrap();
        }
        let cond = random_cond(&mut rng, hidden, d);
        let x = random_binary(&mut rng, d);
        let g = nade_gradients(&p, &cond, &x).unwrap();
        let (e, name) = check_params(&p, &g.params, |q| {
            nade_log_likelihood(q, &cond, &x).unwrap()
        });
        out.record(e, || format!("instance {inst}: {name}"));
        let e = rel_err(
            &g.cond.c,
            &numeric_grad(&cond.c, |c| {
                nade_log_likelihood(
                    &p,
                    &CondBiases {
                        c: c.to_vec(),
                        b: cond.b.clone(),
                    },
                    &x,
                )
                .unwrap()
            }),
        );
        out.record(e, || format!("instance {inst}: cond.c"));
        let e = rel_err(
            &g.cond.b,
            &numeric_grad(&cond.b, |b| {
                nade_log_likelihood(
                    &p,
                    &CondBiases {
                        c: cond.c.clone(),
                        b: b.to_vec(),
                    },
                    &x,
                )
                .unwrap()
            }),
        );
        out.record(e, || format!("instance {inst}: cond.b"));
        out.instances += 1;
    }
    out
}

pub fn rnade_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut rng = seeded(seed);
    let mut out = SuiteResult::default();
    for inst in 0..instances {
        let d = rng.random_range(1..=4);
        let hidden = rng.random_range(1..=5);
        let k = rng.random_range(1..=3);
        let mut p = RnadeParams::new(d, hidden, k, InitScheme::UniformFan, &mut rng).unwrap();
        perturb_all(&mut p, &mut rng, 0.3);
        if inst % 2 == 1 {
            let mut order: Vec<usize> = (0..d).collect();
            order.shuffle(&mut rng);
            p.set_ordering(order).unwrap();
        }
        let cond = random_cond(&mut rng, hidden, p.cond_output_len());
        let x = random_vec(&mut rng, d, 2.0);
        let g = rnade_gradients(&p, &cond, &x).unwrap();
        let (e, name) = check_params(&p, &g.params, |q| rnade_log_density(q, &cond, &x).unwrap());
        out.record(e, || format!("instance {inst}: {name}"));
        let e = rel_err(
            &g.cond.c,
            &numeric_grad(&cond.c, |c| {
                rnade_log_density(
                    &p,
                    &CondBiases {
                        c: c.to_vec(),
                        b: cond.b.clone(),
                    },
                    &x,
                )
                .unwrap()
            }),
        );
        out.record(e, || format!("instance {inst}: cond.c"));
        let e = rel_err(
            &g.cond.b,
            &numeric_grad(&cond.b, |b| {
                rnade_log_density(
                    &p,
                    &CondBiases {
                        c: cond.c.clone(),
                        b: b.to_vec(),
                    },
                    &x,
                )
                .unwrap()
            }),
        );
        out.record(e, || format!("instance {inst}: cond.b"));
        out.instances += 1;
    }
    out
}

pub fn factorial_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut rng = seeded(seed);
    let mut out = SuiteResult::default();
    for inst in 0..instances {
        let d = rng.random_range(1..=8);
        let (recon, x) = if inst % 2 == 0 {
            (
                Recon::FactorialBernoulli { n_dims: d },
                random_binary(&mut rng, d),
            )
        } else {
            let mut g = FactorialGaussian::new(d, 0.0);
            for v in g.log_scale.as_mut_slice() {
                *v = rng.random_range(-1.0..1.0);
            }
            (Recon::FactorialGaussian(g), random_vec(&mut rng, d, 2.0))
        };
        let cond = CondBiases {
            c: Vec::new(),
            b: random_vec(&mut rng, d, 2.0),
        };
        let mut grads = recon.zeros_like();
        let (_, d_cond) = recon
            .accumulate_gradients(&cond, &x, 1.0, &mut grads)
            .unwrap();
        let (e, name) = check_params(&recon, &grads, |r| r.log_prob(&cond, &x).unwrap());
        out.record(e, || format!("instance {inst}: {name}"));
        let e = rel_err(
            &d_cond.b,
            &numeric_grad(&cond.b, |b| {
                recon
                    .log_prob(
                        &CondBiases {
                            c: Vec::new(),
                            b: b.to_vec(),
                        },
                        &x,
                    )
                    .unwrap()
            }),
        );
        out.record(e, || format!("instance {inst}: cond.b"));
        out.instances += 1;
    }
    out
}

/// Encoder and reconstruction jointly, through the denoising (and walkback)
/// loss with the corruption stream held fixed.
pub fn gsn_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut rng = seeded(seed);
    let mut out = SuiteResult::default();
    let kinds = [
        ReconKind::Nade,
        ReconKind::FactorialBernoulli,
        ReconKind::Rnade,
        ReconKind::FactorialGaussian,
    ];
    for inst in 0..instances {
        let recon = kinds[inst % kinds.len()];
        let binary = recon.data_kind() == gsn_core::DataKind::Binary;
        let d = if binary { 5 } else { 3 };
        let corruption = if binary {
            CorruptionSpec::SaltPepper {
                level: gsn_core::NoiseLevel::Fixed(0.3),
            }
        } else {
            CorruptionSpec::Gaussian { sigma: 0.5 }
        };
        let mut spec = ModelSpec::new(recon, d, corruption);
        spec.hidden = 6;
        spec.nade_hidden = 4;
        spec.k = 2;
        spec.condition_output_biases = inst % 8 < 6;
        let mut m = GsnModel::new(spec, &mut rng).unwrap();
        perturb_all(&mut m, &mut rng, 0.2);
        let x = if binary {
            random_binary(&mut rng, d)
        } else {
            random_vec(&mut rng, d, 1.0)
        };
        let noise_seed: u64 = rng.random();
        let walkback = inst % 3 == 2 && binary;
        let loss = |m: &GsnModel, grads: &mut GsnModel| {
            let mut r = seeded(noise_seed);
            if walkback {
                walkback_loss_and_grads(m, &x, 2, &mut r, grads).unwrap()
            } else {
                denoise_loss_and_grads(m, &x, &mut r, grads).unwrap()
            }
        };
        let mut grads = m.zeros_like();
        loss(&m, &mut grads);
        // binary walkback samples are locally constant in the parameters, so
        // finite differences see exactly the gradient-blocked objective
        let (e, name) = check_params(&m, &grads, |q| {
            let mut scratch = q.zeros_like();
            loss(q, &mut scratch)
        });
        out.record(e, || {
            format!("instance {inst} ({recon:?}, walkback={walkback}): {name}")
        });
        out.instances += 1;
    }
    out
}
