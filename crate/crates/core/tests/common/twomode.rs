//! The d = 6 two-codeword task: half the mass near 111000, half near
//! 000111, each bit flipped independently with probability 0.1.

use gsn_core::corruption::{CorruptionSpec, NoiseLevel};
use gsn_core::data::{DataKind, Dataset};
use gsn_core::eval::{kl_divergence, state_vector, stationary_distribution};
use gsn_core::gsn::{exact_transition_matrix, train, GsnModel, ModelSpec, TrainConfig};
use gsn_core::net::SgdConfig;
use gsn_core::random::seeded;
use gsn_core::recon::ReconKind;
use rand::Rng;

pub const D: usize = 6;
pub const FLIP: f64 = 0.1;
pub const CODEWORDS: [[f64; D]; 2] = [
    [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
];

/// Exact generating distribution over the 64 states (bit `i` of the index is `x_i`).
pub fn true_distribution() -> Vec<f64> {
    (0..1usize << D)
        .map(|s| {
            let x = state_vector(s, D);
            CODEWORDS
                .iter()
                .map(|c| {
                    0.5 * x
                        .iter()
                        .zip(c)
                        .map(|(a, b)| if a == b { 1.0 - FLIP } else { FLIP })
                        .product::<f64>()
                })
                .sum()
        })
        .collect()
}

pub fn sample(n: usize, seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let c = &CODEWORDS[rng.random_range(0..2)];
            c.iter()
                .map(|&b| {
                    if rng.random::<f64>() < FLIP {
                        1.0 - b
                    } else {
                        b
                    }
                })
                .collect()
        })
        .collect();
    Dataset::from_rows(&rows, DataKind::Binary).unwrap()
}

#[derive(Debug, Clone)]
pub struct Setup {
    pub n_train: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub hidden: usize,
    pub nade_hidden: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for Setup {
    fn default() -> Self {
        Self {
            n_train: 5000,
            batch_size: 50,
            steps: 2000,
            lr: 0.05,
            momentum: 0.9,
            hidden: 32,
            nade_hidden: 16,
            level: 0.25,
            seed: 1,
        }
    }
}

pub struct Outcome {
    pub after_first_epoch: GsnModel,
    pub model: GsnModel,
    pub kl_first_epoch: f64,
    pub kl_final: f64,
    pub pi: Vec<f64>,
    pub epochs: usize,
}

pub fn stationary(m: &GsnModel) -> Vec<f64> {
    stationary_distribution(&exact_transition_matrix(m).unwrap(), 1e-13).unwrap()
}

pub fn run(s: &Setup) -> Outcome {
    let data = sample(s.n_train, s.seed);
    let mut spec = ModelSpec::new(
        ReconKind::Nade,
        D,
        CorruptionSpec::SaltPepper {
            level: NoiseLevel::Fixed(s.level),
        },
    );
    spec.hidden = s.hidden;
    spec.nade_hidden = s.nade_hidden;
    let mut m = GsnModel::new(spec, &mut seeded(s.seed + 1000)).unwrap();
    let per_epoch = s.n_train.div_ceil(s.batch_size);
    assert_eq!(s.steps % per_epoch, 0, "steps must be whole epochs");
    let cfg = TrainConfig {
        epochs: s.steps / per_epoch,
        batch_size: s.batch_size,
        sgd: SgdConfig {
            learning_rate: s.lr,
            momentum: s.momentum,
            weight_decay: 0.0,
        },
        seed: s.seed,
        ..TrainConfig::default()
    };
    let mut first = None;
    train(&mut m, &data, &cfg, |m, r| {
        if r.epoch == 1 {
            first = Some(m.clone());
        }
        Ok(())
    })
    .unwrap();
    let p = true_distribution();
    let first = first.unwrap();
    let pi = stationary(&m);
    Outcome {
        kl_first_epoch: kl_divergence(&p, &stationary(&first)).unwrap(),
        kl_final: kl_divergence(&p, &pi).unwrap(),
        after_first_epoch: first,
        model: m,
        pi,
        epochs: cfg.epochs,
    }
}
