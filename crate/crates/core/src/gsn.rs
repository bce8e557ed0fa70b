//! The denoising-autoencoder GSN: corrupt, encode, reconstruct.
//!
//! One transition of the chain is `x̃ ~ C(·|x)`, `x' ~ P(·| encoder(x̃))`.
//! Training maximizes `log P(x | encoder(x̃))` for clean `x` (plain
//! denoising) or additionally along a few sampled chain steps (walkback).

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::{salt_pepper_prob, CorruptionSpec, NoiseLevel};
use crate::data::{next_minibatch, DataKind, Dataset, MinibatchPlan};
use crate::error::{Error, Result};
use crate::eval::{enumerate_model_distribution, state_vector, TransitionMatrix, MAX_ENUM_DIMS};
use crate::net::{
    encoder_backward_params, encoder_forward, sgd_step, Activation, EncoderParams, EncoderShape,
    InitScheme, SgdConfig, Velocity,
};
use crate::random::{derived, GsnRng};
use crate::recon::{CondBiases, FactorialGaussian, NadeParams, Recon, ReconKind, RnadeParams};
use crate::tensor::{Params, Tensor};

/// Everything needed to rebuild a model's architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub recon: ReconKind,
    pub n_dims: usize,
    /// Encoder hidden units.
    pub hidden: usize,
    /// NADE / RNADE hidden units (ignored by factorial models).
    pub nade_hidden: usize,
    /// Mixture components per dimension (RNADE only).
    pub k: usize,
    /// Second per-dimension NADE output stage.
    pub extra_hidden: Option<usize>,
    pub activation: Activation,
    /// Whether the encoder also produces output-layer biases. Factorial
    /// models always condition their outputs.
    pub condition_output_biases: bool,
    pub corruption: CorruptionSpec,
    pub init: InitScheme,
    /// Initial log-scale of factorial Gaussian outputs.
    pub initial_log_scale: f64,
}

impl ModelSpec {
    pub fn new(recon: ReconKind, n_dims: usize, corruption: CorruptionSpec) -> Self {
        Self {
            recon,
            n_dims,
            hidden: 64,
            nade_hidden: 32,
            k: 5,
            extra_hidden: None,
            activation: Activation::Tanh,
            condition_output_biases: true,
            corruption,
            init: InitScheme::UniformFan,
            initial_log_scale: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_dims == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument(
                "n_dims and hidden must be positive".into(),
            ));
        }
        if matches!(self.recon, ReconKind::Nade | ReconKind::Rnade) && self.nade_hidden == 0 {
            return Err(Error::InvalidArgument(
                "nade_hidden must be positive".into(),
            ));
        }
        if self.recon == ReconKind::Rnade && self.k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        self.corruption.validate()?;
        match (self.recon.data_kind(), self.corruption) {
            (DataKind::Binary, CorruptionSpec::Gaussian { .. }) => Err(Error::InvalidArgument(
                "binary reconstruction needs salt-and-pepper corruption".into(),
            )),
            (DataKind::Continuous, CorruptionSpec::SaltPepper { .. }) => {
                Err(Error::InvalidArgument(
                    "continuous reconstruction needs gaussian corruption".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// The triple (encoder, reconstruction distribution, corruption).
#[derive(Debug, Clone, PartialEq)]
pub struct GsnModel {
    pub spec: ModelSpec,
    pub encoder: EncoderParams,
    pub recon: Recon,
}

impl GsnModel {
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let recon = match spec.recon {
            ReconKind::FactorialBernoulli => Recon::FactorialBernoulli {
                n_dims: spec.n_dims,
            },
            ReconKind::FactorialGaussian => Recon::FactorialGaussian(FactorialGaussian::new(
                spec.n_dims,
                spec.initial_log_scale,
            )),
            ReconKind::Nade => Recon::Nade(NadeParams::new(
                spec.n_dims,
                spec.nade_hidden,
                spec.extra_hidden,
                spec.init,
                rng,
            )),
            ReconKind::Rnade => Recon::Rnade(RnadeParams::new(
                spec.n_dims,
                spec.nade_hidden,
                spec.k,
                spec.init,
                rng,
            )?),
        };
        let factorial = recon.cond_hidden_len() == 0;
        let shape = EncoderShape {
            n_dims: spec.n_dims,
            n_hidden: spec.hidden,
            nade_hidden: recon.cond_hidden_len(),
            n_out: recon.cond_output_len(),
            condition_output: spec.condition_output_biases || factorial,
            activation: spec.activation,
        };
        let encoder = EncoderParams::init(shape, spec.init, rng);
        Ok(Self {
            spec,
            encoder,
            recon,
        })
    }

    pub fn n_dims(&self) -> usize {
        self.spec.n_dims
    }

    pub fn data_kind(&self) -> DataKind {
        self.recon.data_kind()
    }

    pub fn corruption(&self) -> &CorruptionSpec {
        &self.spec.corruption
    }

    pub fn check_data(&self, d: &Dataset) -> Result<()> {
        if d.kind() != self.data_kind() {
            return Err(Error::Data(format!(
                "{:?} reconstruction cannot model {:?} data",
                self.spec.recon,
                d.kind()
            )));
        }
        if d.n_dims() != self.n_dims() {
            return Err(Error::Shape(format!(
                "model has {} dims, data has {}",
                self.n_dims(),
                d.n_dims()
            )));
        }
        Ok(())
    }

    /// Conditional biases produced from a corrupted state.
    pub fn condition(&self, x_tilde: &[f64]) -> Result<CondBiases> {
        let out = encoder_forward(&self.encoder, x_tilde)?;
        Ok(CondBiases {
            c: out.cond_c,
            b: out.cond_b,
        })
    }

    /// `log P(x | encoder(h))`.
    pub fn log_prob_given_latent(&self, x: &[f64], h: &[f64]) -> Result<f64> {
        self.recon.log_prob(&self.condition(h)?, x)
    }

    /// One chain transition from `x`; returns `(x̃, x')`.
    pub fn transition<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = self.spec.corruption.corrupt(x, rng)?;
        let next = self.recon.sample(&self.condition(&h)?, rng)?;
        Ok((h, next))
    }

    fn check_example(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_dims() {
            return Err(Error::Shape(format!(
                "example has {} dims, model has {}",
                x.len(),
                self.n_dims()
            )));
        }
        if self.data_kind() == DataKind::Binary && x.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("binary model given non-binary example".into()));
        }
        Ok(())
    }
}

impl Params for GsnModel {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.tensors();
        out.extend(self.recon.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.recon.tensors_mut());
        out
    }
}

/// Reconstruction loss of `target` from `x_tilde`, accumulating gradients.
fn reconstruct_step(
    m: &GsnModel,
    x_tilde: &[f64],
    target: &[f64],
    grads: &mut GsnModel,
) -> Result<(f64, CondBiases)> {
    let out = encoder_forward(&m.encoder, x_tilde)?;
    let cond = CondBiases {
        c: out.cond_c,
        b: out.cond_b,
    };
    let (lp, d_cond) = m
        .recon
        .accumulate_gradients(&cond, target, -1.0, &mut grads.recon)?;
    encoder_backward_params(
        &m.encoder,
        &out.cache,
        &d_cond.c,
        &d_cond.b,
        &mut grads.encoder,
    )?;
    Ok((-lp, cond))
}

/// `−log P(x | encoder(x̃))` for one corruption `x̃ ~ C(·|x)`; gradients of
/// the loss are added into `grads`. The corruption carries no gradient.
pub fn denoise_loss_and_grads<R: Rng + ?Sized>(
    m: &GsnModel,
    x: &[f64],
    rng: &mut R,
    grads: &mut GsnModel,
) -> Result<f64> {
    m.check_example(x)?;
    let x_tilde = m.spec.corruption.corrupt(x, rng)?;
    reconstruct_step(m, &x_tilde, x, grads).map(|(loss, _)| loss)
}

/// Walkback: `K` extra corrupt–sample rounds, every round reconstructing the
/// original `x`. Intermediate samples are treated as constants.
pub fn walkback_loss_and_grads<R: Rng + ?Sized>(
    m: &GsnModel,
    x: &[f64],
    k: usize,
    rng: &mut R,
    grads: &mut GsnModel,
) -> Result<f64> {
    m.check_example(x)?;
    let mut x_tilde = m.spec.corruption.corrupt(x, rng)?;
    let mut total = 0.0;
    for round in 0..=k {
        let (loss, cond) = reconstruct_step(m, &x_tilde, x, grads)?;
        total += loss;
        if round < k {
            let sample = m.recon.sample(&cond, rng)?;
            x_tilde = m.spec.corruption.corrupt(&sample, rng)?;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Plain,
    Walkback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub mode: TrainMode,
    /// Extra walkback rounds per example.
    pub walkback_k: usize,
    pub seed: u64,
    /// Worker threads for per-example gradients; results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            sgd: SgdConfig::default(),
            mode: TrainMode::Plain,
            walkback_k: 5,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch: usize,
    /// Mean training loss per example in nats (the walkback total in
    /// walkback mode).
    pub nll: f64,
    pub seconds: f64,
    /// Mean L2 norm of the minibatch gradient over the epoch.
    pub grad_norm: f64,
}

/// Per-batch gradients are summed over this many fixed contiguous chunks so
/// the floating-point reduction order does not depend on the thread count.
const GRADIENT_CHUNKS: usize = 8;

fn example_loss<R: Rng + ?Sized>(
    m: &GsnModel,
    x: &[f64],
    cfg: &TrainConfig,
    rng: &mut R,
    grads: &mut GsnModel,
) -> Result<f64> {
    match cfg.mode {
        TrainMode::Plain => denoise_loss_and_grads(m, x, rng, grads),
        TrainMode::Walkback => walkback_loss_and_grads(m, x, cfg.walkback_k, rng, grads),
    }
}

fn batch_gradient(
    m: &GsnModel,
    rows: &[&[f64]],
    positions: &[usize],
    epoch: usize,
    cfg: &TrainConfig,
) -> Result<(f64, GsnModel)> {
    let chunk = rows.len().div_ceil(GRADIENT_CHUNKS).max(1);
    let work = |c: usize| -> Result<(f64, GsnModel)> {
        let mut grads = m.zeros_like();
        let mut loss = 0.0;
        let lo = (c * chunk).min(rows.len());
        let hi = ((c + 1) * chunk).min(rows.len());
        for j in lo..hi {
            let mut rng = derived(cfg.seed, &[1, epoch as u64, positions[j] as u64]);
            loss += example_loss(m, rows[j], cfg, &mut rng, &mut grads)?;
        }
        Ok((loss, grads))
    };
    let n_chunks = rows.len().div_ceil(chunk);
    let parts: Vec<Result<(f64, GsnModel)>> = if cfg.threads > 1 {
        (0..n_chunks).into_par_iter().map(work).collect()
    } else {
        (0..n_chunks).map(work).collect()
    };
    let mut total_loss = 0.0;
    let mut total: Option<GsnModel> = None;
    for part in parts {
        let (loss, grads) = part?;
        total_loss += loss;
        match total.as_mut() {
            Some(t) => t.add_scaled(1.0, &grads),
            None => total = Some(grads),
        }
    }
    let mut total = total.unwrap_or_else(|| m.zeros_like());
    let n = rows.len() as f64;
    total.scale(1.0 / n);
    Ok((total_loss / n, total))
}

/// Minibatch SGD. `on_epoch` sees the model after every epoch.
///
/// On divergence the model is restored to its state at the start of the
/// failing epoch and [`Error::Diverged`] is returned.
pub fn train(
    m: &mut GsnModel,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&GsnModel, &TrainReport) -> Result<()>,
) -> Result<Vec<TrainReport>> {
    m.check_data(data)?;
    cfg.sgd.validate()?;
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut plan = MinibatchPlan::new(
        data.n_examples(),
        cfg.batch_size,
        derived(cfg.seed, &[2]).random(),
    )?;
    let mut velocity = Velocity::default();
    let mut reports = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let snapshot = m.clone();
        let (mut loss_sum, mut norm_sum, mut seen) = (0.0, 0.0, 0usize);
        let batches = plan.batches_per_epoch();
        for _ in 0..batches {
            let offset = seen;
            let batch = next_minibatch(data, &mut plan)?;
            let rows: Vec<&[f64]> = batch.rows().collect();
            let positions: Vec<usize> = (offset..offset + rows.len()).collect();
            let (loss, grads) =
                pool.install(|| batch_gradient(m, &rows, &positions, epoch, cfg))?;
            let diverged = |reason: String| Error::Diverged {
                epoch: epoch + 1,
                reason,
            };
            if !loss.is_finite() {
                *m = snapshot;
                return Err(diverged(format!("loss became {loss}")));
            }
            if let Some(name) = grads.first_non_finite() {
                *m = snapshot;
                return Err(diverged(format!("non-finite gradient in {name}")));
            }
            norm_sum += grads.l2_norm();
            sgd_step(m, &grads, &cfg.sgd, &mut velocity)?;
            loss_sum += loss * rows.len() as f64;
            seen += rows.len();
        }
        if let Some(name) = m.first_non_finite() {
            *m = snapshot;
            return Err(Error::Diverged {
                epoch: epoch + 1,
                reason: format!("non-finite parameter in {name}"),
            });
        }
        let report = TrainReport {
            epoch: epoch + 1,
            nll: loss_sum / seen as f64,
            seconds: start.elapsed().as_secs_f64(),
            grad_norm: norm_sum / batches as f64,
        };
        log::info!(
            "epoch {} nll {:.4} grad_norm {:.4} ({:.1}s)",
            report.epoch,
            report.nll,
            report.grad_norm,
            report.seconds
        );
        on_epoch(m, &report)?;
        reports.push(report);
    }
    Ok(reports)
}

/// A state of the chain. `h` is the corrupted state that produced `x`
/// (empty for the initial state).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub step: usize,
}

/// Runs `n_steps` transitions from `x0`, recording the initial state and
/// every state whose step is a multiple of `record_every`.
pub fn run_chain<R: Rng + ?Sized>(
    m: &GsnModel,
    x0: &[f64],
    n_steps: usize,
    rng: &mut R,
    record_every: usize,
) -> Result<Vec<ChainState>> {
    if record_every == 0 {
        return Err(Error::InvalidArgument(
            "record interval must be positive".into(),
        ));
    }
    m.check_example(x0)?;
    let mut states = vec![ChainState {
        x: x0.to_vec(),
        h: Vec::new(),
        step: 0,
    }];
    let mut x = x0.to_vec();
    for step in 1..=n_steps {
        let (h, next) = m.transition(&x, rng)?;
        x = next;
        if step % record_every == 0 {
            states.push(ChainState {
                x: x.clone(),
                h,
                step,
            });
        }
    }
    Ok(states)
}

/// Collects `n_samples` latent states from one chain, one every `stride`
/// steps after `burn_in` discarded steps.
pub fn collect_latents<R: Rng + ?Sized>(
    m: &GsnModel,
    x0: &[f64],
    n_samples: usize,
    stride: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if n_samples == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "need n_samples > 0 and stride > 0".into(),
        ));
    }
    m.check_example(x0)?;
    let mut x = x0.to_vec();
    for _ in 0..burn_in {
        x = m.transition(&x, rng)?.1;
    }
    let mut latents = Vec::with_capacity(n_samples);
    let mut step = 0usize;
    while latents.len() < n_samples {
        let (h, next) = m.transition(&x, rng)?;
        x = next;
        step += 1;
        if step.is_multiple_of(stride) {
            latents.push(h);
        }
    }
    Ok(latents)
}

/// How a sampling chain is started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainInit {
    /// A uniformly chosen training example.
    Data,
    Zeros,
    /// Fair coins for binary data, `U(-1, 1)` otherwise.
    Uniform,
}

pub fn initial_state<R: Rng + ?Sized>(
    m: &GsnModel,
    init: ChainInit,
    data: Option<&Dataset>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let d = m.n_dims();
    match init {
        ChainInit::Data => {
            let data = data.ok_or_else(|| {
                Error::InvalidArgument("chain init from data needs a dataset".into())
            })?;
            m.check_data(data)?;
            if data.is_empty() {
                return Err(Error::Data(
                    "cannot start a chain from an empty dataset".into(),
                ));
            }
            Ok(data.row(rng.random_range(0..data.n_examples())).to_vec())
        }
        ChainInit::Zeros => Ok(vec![0.0; d]),
        ChainInit::Uniform => Ok(match m.data_kind() {
            DataKind::Binary => (0..d)
                .map(|_| f64::from(u8::from(rng.random::<bool>())))
                .collect(),
            DataKind::Continuous => (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }),
    }
}

/// The exact transition matrix over `{0,1}^d` for a binary model with fixed
/// salt-and-pepper corruption: `T[x, x'] = Σ_x̃ C(x̃|x) P(x'|encoder(x̃))`.
pub fn exact_transition_matrix(m: &GsnModel) -> Result<TransitionMatrix> {
    let d = m.n_dims();
    if m.data_kind() != DataKind::Binary {
        return Err(Error::Data(
            "exact transition matrix needs a binary model".into(),
        ));
    }
    if d > MAX_ENUM_DIMS {
        return Err(Error::InvalidArgument(format!(
            "{d} dims exceed the enumeration limit of {MAX_ENUM_DIMS}"
        )));
    }
    let level = match m.spec.corruption {
        CorruptionSpec::SaltPepper {
            level: NoiseLevel::Fixed(l),
        } => l,
        _ => {
            return Err(Error::InvalidArgument(
                "exact transition matrix needs fixed-level salt-and-pepper corruption".into(),
            ))
        }
    };
    let n = 1usize << d;
    // recon[x̃ · n + x'] = P(x' | encoder(x̃))
    let mut recon = Vec::with_capacity(n * n);
    for s in 0..n {
        let cond = m.condition(&state_vector(s, d))?;
        recon.extend(enumerate_model_distribution(&m.recon, &cond, d)?);
    }
    let mut entries = vec![0.0; n * n];
    for x in 0..n {
        let xv = state_vector(x, d);
        let row = &mut entries[x * n..(x + 1) * n];
        for s in 0..n {
            let c = salt_pepper_prob(&xv, &state_vector(s, d), level);
            crate::tensor::axpy(c, &recon[s * n..(s + 1) * n], row);
        }
    }
    TransitionMatrix::new(d, entries)
}

/// A generator for a fresh chain keyed by a seed.
pub fn chain_rng(seed: u64) -> GsnRng {
    derived(seed, &[3])
}
