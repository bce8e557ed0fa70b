//! Reconstruction distributions `P(x | cond)`.
//!
//! A NADE or RNADE keeps its weight matrices unconditional; the encoder only
//! shifts its biases: the hidden pre-activation starts at `c0 + cond.c` and
//! the output biases are `b0 + cond.b`. The factorial baselines take their
//! per-dimension logits or means straight from `cond.b`.
//!
//! All gradient routines return gradients of the *log-likelihood* scaled by a
//! caller-supplied factor and accumulate them into a same-shaped buffer, so a
//! loss gradient is obtained with `scale = -1`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::DataKind;
use crate::error::{Error, Result};
use crate::net::{fill_uniform_fan, InitScheme};
use crate::tensor::{axpy, dot, log_sigmoid, log_sum_exp, sigmoid, Params, Tensor};

/// Lower and upper clamp of mixture / factorial log-scales.
pub const LOG_SCALE_MIN: f64 = -7.0;
pub const LOG_SCALE_MAX: f64 = 7.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Encoder-produced bias offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct CondBiases {
    pub c: Vec<f64>,
    pub b: Vec<f64>,
}

impl CondBiases {
    pub fn zeros(hidden: usize, out: usize) -> Self {
        Self {
            c: vec![0.0; hidden],
            b: vec![0.0; out],
        }
    }
}

fn check_binary(x: &[f64]) -> Result<()> {
    if x.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data(
            "binary distribution evaluated on non-binary data".into(),
        ));
    }
    Ok(())
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!(
            "{what}: expected length {want}, got {got}"
        )));
    }
    Ok(())
}

#[inline]
fn clamp_log_scale(s: f64) -> (f64, bool) {
    if s <= LOG_SCALE_MIN {
        (LOG_SCALE_MIN, false)
    } else if s >= LOG_SCALE_MAX {
        (LOG_SCALE_MAX, false)
    } else {
        (s, true)
    }
}

fn identity_ordering(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn check_ordering(ordering: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if ordering.len() != n {
        return Err(Error::Shape(format!(
            "ordering has {} entries for {n} dims",
            ordering.len()
        )));
    }
    for &i in ordering {
        if i >= n || seen[i] {
            return Err(Error::InvalidArgument(
                "ordering is not a permutation".into(),
            ));
        }
        seen[i] = true;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// NADE

/// Optional second hidden stage applied per dimension before the output
/// weights: `g_i = σ(U h_i + e)`, `logit_i = b_i + V_i · g_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraLayer {
    pub u: Tensor,
    pub e: Tensor,
}

/// Binary NADE. `w` is stored input-major: row `i` holds the hidden weights
/// added to the running pre-activation after observing `x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NadeParams {
    pub w: Tensor,
    pub v: Tensor,
    pub b0: Tensor,
    pub c0: Tensor,
    pub extra: Option<ExtraLayer>,
    ordering: Vec<usize>,
}

impl NadeParams {
    pub fn new<R: Rng + ?Sized>(
        n_dims: usize,
        hidden: usize,
        extra_hidden: Option<usize>,
        scheme: InitScheme,
        rng: &mut R,
    ) -> Self {
        let out_hidden = extra_hidden.unwrap_or(hidden);
        let mut p = Self {
            w: Tensor::zeros(&[n_dims, hidden]),
            v: Tensor::zeros(&[n_dims, out_hidden]),
            b0: Tensor::zeros(&[n_dims]),
            c0: Tensor::zeros(&[hidden]),
            extra: extra_hidden.map(|h2| ExtraLayer {
                u: Tensor::zeros(&[h2, hidden]),
                e: Tensor::zeros(&[h2]),
            }),
            ordering: identity_ordering(n_dims),
        };
        if scheme == InitScheme::UniformFan {
            fill_uniform_fan(&mut p.w, rng);
            fill_uniform_fan(&mut p.v, rng);
            if let Some(ex) = p.extra.as_mut() {
                fill_uniform_fan(&mut ex.u, rng);
            }
        }
        p
    }

    pub fn n_dims(&self) -> usize {
        self.b0.len()
    }

    pub fn hidden(&self) -> usize {
        self.c0.len()
    }

    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    pub fn set_ordering(&mut self, ordering: Vec<usize>) -> Result<()> {
        check_ordering(&ordering, self.n_dims())?;
        self.ordering = ordering;
        Ok(())
    }

    fn check_cond(&self, cond: &CondBiases) -> Result<()> {
        check_len("NADE cond.c", cond.c.len(), self.hidden())?;
        check_len("NADE cond.b", cond.b.len(), self.n_dims())
    }

    /// Output logit of dimension `i` from the hidden activation `h`.
    /// `g` receives the second-stage activation when present.
    #[inline]
    fn logit(&self, i: usize, bias: f64, h: &[f64], g: &mut [f64]) -> f64 {
        match &self.extra {
            Some(ex) => {
                for (r, gr) in g.iter_mut().enumerate() {
                    *gr = sigmoid(ex.e.as_slice()[r] + dot(ex.u.row(r), h));
                }
                bias + dot(self.v.row(i), g)
            }
            None => bias + dot(self.v.row(i), h),
        }
    }

    fn extra_width(&self) -> usize {
        self.extra.as_ref().map_or(0, |ex| ex.e.len())
    }
}

impl Params for NadeParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("nade.W".to_string(), &self.w),
            ("nade.V".to_string(), &self.v),
            ("nade.b0".to_string(), &self.b0),
            ("nade.c0".to_string(), &self.c0),
        ];
        if let Some(ex) = &self.extra {
            out.push(("nade.U".to_string(), &ex.u));
            out.push(("nade.e".to_string(), &ex.e));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("nade.W".to_string(), &mut self.w),
            ("nade.V".to_string(), &mut self.v),
            ("nade.b0".to_string(), &mut self.b0),
            ("nade.c0".to_string(), &mut self.c0),
        ];
        if let Some(ex) = &mut self.extra {
            out.push(("nade.U".to_string(), &mut ex.u));
            out.push(("nade.e".to_string(), &mut ex.e));
        }
        out
    }
}

/// `Σᵢ log P(xᵢ | x₍<ᵢ₎)` scanned in the model's ordering.
pub fn nade_log_likelihood(p: &NadeParams, cond: &CondBiases, x: &[f64]) -> Result<f64> {
    check_len("NADE input", x.len(), p.n_dims())?;
    check_binary(x)?;
    p.check_cond(cond)?;
    let mut a: Vec<f64> =
        p.c0.as_slice()
            .iter()
            .zip(&cond.c)
            .map(|(c, d)| c + d)
            .collect();
    let mut h = vec![0.0; p.hidden()];
    let mut g = vec![0.0; p.extra_width()];
    let mut ll = 0.0;
    for &i in &p.ordering {
        for (hj, &aj) in h.iter_mut().zip(&a) {
            *hj = sigmoid(aj);
        }
        let logit = p.logit(i, p.b0.as_slice()[i] + cond.b[i], &h, &mut g);
        if x[i] == 1.0 {
            ll += log_sigmoid(logit);
            axpy(1.0, p.w.row(i), &mut a);
        } else {
            ll += log_sigmoid(-logit);
        }
    }
    Ok(ll)
}

/// Log-likelihood together with its full gradient.
#[derive(Debug, Clone)]
pub struct NadeGradients {
    pub log_likelihood: f64,
    pub params: NadeParams,
    pub cond: CondBiases,
}

pub fn nade_gradients(p: &NadeParams, cond: &CondBiases, x: &[f64]) -> Result<NadeGradients> {
    let mut params = p.zeros_like();
    let (log_likelihood, cond_grad) = nade_accumulate_gradients(p, cond, x, 1.0, &mut params)?;
    Ok(NadeGradients {
        log_likelihood,
        params,
        cond: cond_grad,
    })
}

/// Adds `scale · ∇ log P(x | cond)` into `grads` and returns the
/// log-likelihood with `scale · ∂/∂cond`. Cost is O(n_dims · hidden).
pub fn nade_accumulate_gradients(
    p: &NadeParams,
    cond: &CondBiases,
    x: &[f64],
    scale: f64,
    grads: &mut NadeParams,
) -> Result<(f64, CondBiases)> {
    check_len("NADE input", x.len(), p.n_dims())?;
    check_binary(x)?;
    p.check_cond(cond)?;
    let (d, hid, h2) = (p.n_dims(), p.hidden(), p.extra_width());
    let mut a: Vec<f64> =
        p.c0.as_slice()
            .iter()
            .zip(&cond.c)
            .map(|(c, d)| c + d)
            .collect();
    // forward, keeping per-step activations
    let mut hs = vec![0.0; d * hid];
    let mut gs = vec![0.0; d * h2];
    let mut dlogit = vec![0.0; d];
    let mut ll = 0.0;
    for (step, &i) in p.ordering.iter().enumerate() {
        let h = &mut hs[step * hid..(step + 1) * hid];
        for (hj, &aj) in h.iter_mut().zip(&a) {
            *hj = sigmoid(aj);
        }
        let g = &mut gs[step * h2..(step + 1) * h2];
        let logit = p.logit(i, p.b0.as_slice()[i] + cond.b[i], h, g);
        let prob = sigmoid(logit);
        if x[i] == 1.0 {
            ll += log_sigmoid(logit);
            axpy(1.0, p.w.row(i), &mut a);
        } else {
            ll += log_sigmoid(-logit);
        }
        dlogit[i] = x[i] - prob;
    }
    // backward
    let mut cond_b = vec![0.0; d];
    let mut acc = vec![0.0; hid];
    let mut dh = vec![0.0; hid];
    let mut dz = vec![0.0; h2];
    for (step, &i) in p.ordering.iter().enumerate().rev() {
        if x[i] != 0.0 {
            axpy(scale * x[i], &acc, grads.w.row_mut(i));
        }
        let dl = dlogit[i];
        cond_b[i] = scale * dl;
        grads.b0.as_mut_slice()[i] += scale * dl;
        let h = &hs[step * hid..(step + 1) * hid];
        match (&p.extra, grads.extra.as_mut()) {
            (Some(ex), Some(gex)) => {
                let g = &gs[step * h2..(step + 1) * h2];
                axpy(scale * dl, g, grads.v.row_mut(i));
                for (r, dzr) in dz.iter_mut().enumerate() {
                    *dzr = dl * p.v.row(i)[r] * g[r] * (1.0 - g[r]);
                }
                axpy(scale, &dz, gex.e.as_mut_slice());
                gex.u.add_outer(scale, &dz, h);
                dh.iter_mut().for_each(|v| *v = 0.0);
                ex.u.matvec_t_acc(&dz, &mut dh);
            }
            _ => {
                axpy(scale * dl, h, grads.v.row_mut(i));
                for (dhj, &vj) in dh.iter_mut().zip(p.v.row(i)) {
                    *dhj = dl * vj;
                }
            }
        }
        for ((accj, &dhj), &hj) in acc.iter_mut().zip(&dh).zip(h) {
            *accj += dhj * hj * (1.0 - hj);
        }
    }
    axpy(scale, &acc, grads.c0.as_mut_slice());
    let cond_c = acc.iter().map(|v| scale * v).collect();
    Ok((
        ll,
        CondBiases {
            c: cond_c,
            b: cond_b,
        },
    ))
}

/// Ancestral sample in the model's ordering.
pub fn nade_sample<R: Rng + ?Sized>(
    p: &NadeParams,
    cond: &CondBiases,
    rng: &mut R,
) -> Result<Vec<f64>> {
    p.check_cond(cond)?;
    let mut a: Vec<f64> =
        p.c0.as_slice()
            .iter()
            .zip(&cond.c)
            .map(|(c, d)| c + d)
            .collect();
    let mut h = vec![0.0; p.hidden()];
    let mut g = vec![0.0; p.extra_width()];
    let mut x = vec![0.0; p.n_dims()];
    for &i in &p.ordering {
        for (hj, &aj) in h.iter_mut().zip(&a) {
            *hj = sigmoid(aj);
        }
        let logit = p.logit(i, p.b0.as_slice()[i] + cond.b[i], &h, &mut g);
        if rng.random::<f64>() < sigmoid(logit) {
            x[i] = 1.0;
            axpy(1.0, p.w.row(i), &mut a);
        }
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// RNADE

/// Real-valued NADE with a `k`-component Gaussian mixture per dimension.
///
/// Mixture heads are stacked per dimension: row `i·k + m` of `alpha_w`,
/// `mu_w` and `s_w` produces component `m` of dimension `i`. The conditional
/// output offsets `cond.b` are laid out as `[α | μ | s]`, each block of
/// length `n_dims · k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnadeParams {
    pub w: Tensor,
    pub c0: Tensor,
    pub alpha_w: Tensor,
    pub alpha_b: Tensor,
    pub mu_w: Tensor,
    pub mu_b: Tensor,
    pub s_w: Tensor,
    pub s_b: Tensor,
    k: usize,
    ordering: Vec<usize>,
}

impl RnadeParams {
    pub fn new<R: Rng + ?Sized>(
        n_dims: usize,
        hidden: usize,
        k: usize,
        scheme: InitScheme,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument(
                "mixture needs at least one component".into(),
            ));
        }
        let rows = n_dims * k;
        let mut p = Self {
            w: Tensor::zeros(&[n_dims, hidden]),
            c0: Tensor::zeros(&[hidden]),
            alpha_w: Tensor::zeros(&[rows, hidden]),
            alpha_b: Tensor::zeros(&[rows]),
            mu_w: Tensor::zeros(&[rows, hidden]),
            mu_b: Tensor::zeros(&[rows]),
            s_w: Tensor::zeros(&[rows, hidden]),
            s_b: Tensor::zeros(&[rows]),
            k,
            ordering: identity_ordering(n_dims),
        };
        if scheme == InitScheme::UniformFan {
            fill_uniform_fan(&mut p.w, rng);
            fill_uniform_fan(&mut p.alpha_w, rng);
            fill_uniform_fan(&mut p.mu_w, rng);
            fill_uniform_fan(&mut p.s_w, rng);
        }
        Ok(p)
    }

    pub fn n_dims(&self) -> usize {
        self.w.rows()
    }

    pub fn hidden(&self) -> usize {
        self.c0.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    pub fn set_ordering(&mut self, ordering: Vec<usize>) -> Result<()> {
        check_ordering(&ordering, self.n_dims())?;
        self.ordering = ordering;
        Ok(())
    }

    pub fn cond_output_len(&self) -> usize {
        3 * self.n_dims() * self.k
    }

    fn check_cond(&self, cond: &CondBiases) -> Result<()> {
        check_len("RNADE cond.c", cond.c.len(), self.hidden())?;
        check_len("RNADE cond.b", cond.b.len(), self.cond_output_len())
    }

    /// Mixture parameters `(α logits, μ, raw log-scale)` of dimension `i`.
    fn heads(&self, i: usize, cond: &CondBiases, h: &[f64], out: &mut MixtureHeads) {
        let block = self.n_dims() * self.k;
        for m in 0..self.k {
            let r = i * self.k + m;
            out.alpha[m] = self.alpha_b.as_slice()[r] + cond.b[r] + dot(self.alpha_w.row(r), h);
            out.mu[m] = self.mu_b.as_slice()[r] + cond.b[block + r] + dot(self.mu_w.row(r), h);
            out.s_raw[m] = self.s_b.as_slice()[r] + cond.b[2 * block + r] + dot(self.s_w.row(r), h);
        }
    }
}

struct MixtureHeads {
    alpha: Vec<f64>,
    mu: Vec<f64>,
    s_raw: Vec<f64>,
    comp: Vec<f64>,
}

impl MixtureHeads {
    fn new(k: usize) -> Self {
        Self {
            alpha: vec![0.0; k],
            mu: vec![0.0; k],
            s_raw: vec![0.0; k],
            comp: vec![0.0; k],
        }
    }

    /// Fills `comp` with per-component joint log-densities and returns their
    /// log-sum-exp.
    fn log_density(&mut self, x: f64) -> f64 {
        let norm = log_sum_exp(&self.alpha);
        for m in 0..self.alpha.len() {
            let (s, _) = clamp_log_scale(self.s_raw[m]);
            let z = (x - self.mu[m]) * (-s).exp();
            self.comp[m] = self.alpha[m] - norm - HALF_LN_2PI - s - 0.5 * z * z;
        }
        log_sum_exp(&self.comp)
    }
}

impl Params for RnadeParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("rnade.W".into(), &self.w),
            ("rnade.c0".into(), &self.c0),
            ("rnade.head.alpha_w".into(), &self.alpha_w),
            ("rnade.head.alpha_b".into(), &self.alpha_b),
            ("rnade.head.mu_w".into(), &self.mu_w),
            ("rnade.head.mu_b".into(), &self.mu_b),
            ("rnade.head.s_w".into(), &self.s_w),
            ("rnade.head.s_b".into(), &self.s_b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("rnade.W".into(), &mut self.w),
            ("rnade.c0".into(), &mut self.c0),
            ("rnade.head.alpha_w".into(), &mut self.alpha_w),
            ("rnade.head.alpha_b".into(), &mut self.alpha_b),
            ("rnade.head.mu_w".into(), &mut self.mu_w),
            ("rnade.head.mu_b".into(), &mut self.mu_b),
            ("rnade.head.s_w".into(), &mut self.s_w),
            ("rnade.head.s_b".into(), &mut self.s_b),
        ]
    }
}

pub fn rnade_log_density(p: &RnadeParams, cond: &CondBiases, x: &[f64]) -> Result<f64> {
    check_len("RNADE input", x.len(), p.n_dims())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("RNADE input".into()));
    }
    p.check_cond(cond)?;
    let mut a: Vec<f64> =
        p.c0.as_slice()
            .iter()
            .zip(&cond.c)
            .map(|(c, d)| c + d)
            .collect();
    let mut h = vec![0.0; p.hidden()];
    let mut heads = MixtureHeads::new(p.k);
    let mut total = 0.0;
    for &i in &p.ordering {
        for (hj, &aj) in h.iter_mut().zip(&a) {
            *hj = sigmoid(aj);
        }
        p.heads(i, cond, &h, &mut heads);
        total += heads.log_density(x[i]);
        axpy(x[i], p.w.row(i), &mut a);
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct RnadeGradients {
    pub log_density: f64,
    pub params: RnadeParams,
    pub cond: CondBiases,
}

pub fn rnade_gradients(p: &RnadeParams, cond: &CondBiases, x: &[f64]) -> Result<RnadeGradients> {
    let mut params = p.zeros_like();
    let (log_density, cond_grad) = rnade_accumulate_gradients(p, cond, x, 1.0, &mut params)?;
    Ok(RnadeGradients {
        log_density,
        params,
        cond: cond_grad,
    })
}

pub fn rnade_accumulate_gradients(
    p: &RnadeParams,
    cond: &CondBiases,
    x: &[f64],
    scale: f64,
    grads: &mut RnadeParams,
) -> Result<(f64, CondBiases)> {
    check_len("RNADE input", x.len(), p.n_dims())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("RNADE input".into()));
    }
    p.check_cond(cond)?;
    let (d, hid, k) = (p.n_dims(), p.hidden(), p.k);
    let block = d * k;
    let mut a: Vec<f64> =
        p.c0.as_slice()
            .iter()
            .zip(&cond.c)
            .map(|(c, d)| c + d)
            .collect();
    let mut hs = vec![0.0; d * hid];
    // per-dimension gradients wrt (α logits, μ, raw log-scale)
    let mut d_alpha = vec![0.0; block];
    let mut d_mu = vec![0.0; block];
    let mut d_s = vec![0.0; block];
    let mut heads = MixtureHeads::new(k);
    let mut total = 0.0;
    for (step, &i) in p.ordering.iter().enumerate() {
        let h = &mut hs[step * hid..(step + 1) * hid];
        for (hj, &aj) in h.iter_mut().zip(&a) {
            *hj = sigmoid(aj);
        }
        p.heads(i, cond, h, &mut heads);
        let lp = heads.log_density(x[i]);
        total += lp;
        let norm = log_sum_exp(&heads.alpha);
        for m in 0..k {
            let r = i * k + m;
            let gamma = (heads.comp[m] - lp).exp();
            let prior = (heads.alpha[m] - norm).exp();
            let (s, live) = clamp_log_scale(heads.s_raw[m]);
            let inv_sigma = (-s).exp();
            let z = (x[i] - heads.mu[m]) * inv_sigma;
            d_alpha[r] = gamma - prior;
            d_mu[r] = gamma * z * inv_sigma;
            d_s[r] = if live { gamma * (z * z - 1.0) } else { 0.0 };
        }
        axpy(x[i], p.w.row(i), &mut a);
    }
    let mut acc = vec![0.0; hid];
    let mut dh = vec![0.0; hid];
    for (step, &i) in p.ordering.iter().enumerate().rev() {
        axpy(scale * x[i], &acc, grads.w.row_mut(i));
        let h = &hs[step * hid..(step + 1) * hid];
        dh.iter_mut().for_each(|v| *v = 0.0);
        for m in 0..k {
            let r = i * k + m;
            let heads_grads = [
                (
                    &p.alpha_w,
                    &mut grads.alpha_w,
                    &mut grads.alpha_b,
                    d_alpha[r],
                ),
                (&p.mu_w, &mut grads.mu_w, &mut grads.mu_b, d_mu[r]),
                (&p.s_w, &mut grads.s_w, &mut grads.s_b, d_s[r]),
            ];
            for (w, gw, gb, g) in heads_grads {
                if g == 0.0 {
                    continue;
                }
                axpy(g, w.row(r), &mut dh);
                axpy(scale * g, h, gw.row_mut(r));
                gb.as_mut_slice()[r] += scale * g;
            }
        }
        for ((accj, &dhj), &hj) in acc.iter_mut().zip(&dh).zip(h) {
            *accj += dhj * hj * (1.0 - hj);
        }
    }
    axpy(scale, &acc, grads.c0.as_mut_slice());
    let mut cond_b = Vec::with_capacity(3 * block);
    cond_b.extend(d_alpha.iter().map(|v| scale * v));
    cond_b.extend(d_mu.iter().map(|v| scale * v));
    cond_b.extend(d_s.iter().map(|v| scale * v));
    Ok((
        total,
        CondBiases {
            c: acc.iter().map(|v| scale * v).collect(),
            b: cond_b,
        },
    ))
}

pub fn rnade_sample<R: Rng + ?Sized>(
    p: &RnadeParams,
    cond: &CondBiases,
    rng: &mut R,
) -> Result<Vec<f64>> {
    p.check_cond(cond)?;
    let mut a: Vec<f64> =
        p.c0.as_slice()
            .iter()
            .zip(&cond.c)
            .map(|(c, d)| c + d)
            .collect();
    let mut h = vec![0.0; p.hidden()];
    let mut heads = MixtureHeads::new(p.k);
    let mut x = vec![0.0; p.n_dims()];
    for &i in &p.ordering {
        for (hj, &aj) in h.iter_mut().zip(&a) {
            *hj = sigmoid(aj);
        }
        p.heads(i, cond, &h, &mut heads);
        let max = heads
            .alpha
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = heads.alpha.iter().map(|v| (v - max).exp()).collect();
        let m = WeightedIndex::new(&weights)
            .map_err(|e| Error::NonFinite(format!("mixture weights: {e}")))?
            .sample(rng);
        let (s, _) = clamp_log_scale(heads.s_raw[m]);
        let eps: f64 = rng.sample(StandardNormal);
        x[i] = heads.mu[m] + s.exp() * eps;
        axpy(x[i], p.w.row(i), &mut a);
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Factorial baselines

/// Factorized Gaussian with means from `cond.b` and an unconditional
/// per-dimension log-scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorialGaussian {
    pub log_scale: Tensor,
}

impl FactorialGaussian {
    pub fn new(n_dims: usize, initial_log_scale: f64) -> Self {
        Self {
            log_scale: Tensor::vector(vec![initial_log_scale; n_dims]),
        }
    }
}

/// `Σᵢ log Bernoulli(xᵢ; σ(logitᵢ))`.
pub fn bernoulli_log_prob(logits: &[f64], x: &[f64]) -> Result<f64> {
    check_len("Bernoulli input", x.len(), logits.len())?;
    check_binary(x)?;
    Ok(logits
        .iter()
        .zip(x)
        .map(|(&l, &xi)| {
            if xi == 1.0 {
                log_sigmoid(l)
            } else {
                log_sigmoid(-l)
            }
        })
        .sum())
}

/// Gradient of [`bernoulli_log_prob`] wrt the logits.
pub fn bernoulli_logit_gradient(logits: &[f64], x: &[f64]) -> Vec<f64> {
    logits
        .iter()
        .zip(x)
        .map(|(&l, &xi)| xi - sigmoid(l))
        .collect()
}

pub fn bernoulli_sample<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Vec<f64> {
    logits
        .iter()
        .map(|&l| {
            if rng.random::<f64>() < sigmoid(l) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// `Σᵢ log N(xᵢ; μᵢ, σᵢ²)` with `σᵢ = exp(clamp(sᵢ))`.
pub fn gaussian_log_prob(means: &[f64], log_scale: &[f64], x: &[f64]) -> Result<f64> {
    check_len("Gaussian input", x.len(), means.len())?;
    check_len("Gaussian log-scale", log_scale.len(), means.len())?;
    Ok(means
        .iter()
        .zip(log_scale)
        .zip(x)
        .map(|((&mu, &s), &xi)| {
            let (s, _) = clamp_log_scale(s);
            let z = (xi - mu) * (-s).exp();
            -HALF_LN_2PI - s - 0.5 * z * z
        })
        .sum())
}

/// Gradients of [`gaussian_log_prob`] wrt `(means, log_scale)`.
pub fn gaussian_gradients(means: &[f64], log_scale: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut d_mu = Vec::with_capacity(x.len());
    let mut d_s = Vec::with_capacity(x.len());
    for ((&mu, &s), &xi) in means.iter().zip(log_scale).zip(x) {
        let (s, live) = clamp_log_scale(s);
        let inv = (-s).exp();
        let z = (xi - mu) * inv;
        d_mu.push(z * inv);
        d_s.push(if live { z * z - 1.0 } else { 0.0 });
    }
    (d_mu, d_s)
}

pub fn gaussian_sample<R: Rng + ?Sized>(means: &[f64], log_scale: &[f64], rng: &mut R) -> Vec<f64> {
    means
        .iter()
        .zip(log_scale)
        .map(|(&mu, &s)| {
            let eps: f64 = rng.sample(StandardNormal);
            mu + clamp_log_scale(s).0.exp() * eps
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Dispatch

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconKind {
    FactorialBernoulli,
    FactorialGaussian,
    Nade,
    Rnade,
}

impl ReconKind {
    pub fn data_kind(self) -> DataKind {
        match self {
            ReconKind::FactorialBernoulli | ReconKind::Nade => DataKind::Binary,
            ReconKind::FactorialGaussian | ReconKind::Rnade => DataKind::Continuous,
        }
    }
}

/// A reconstruction distribution of any supported family.
#[derive(Debug, Clone, PartialEq)]
pub enum Recon {
    FactorialBernoulli { n_dims: usize },
    FactorialGaussian(FactorialGaussian),
    Nade(NadeParams),
    Rnade(RnadeParams),
}

impl Recon {
    pub fn kind(&self) -> ReconKind {
        match self {
            Recon::FactorialBernoulli { .. } => ReconKind::FactorialBernoulli,
            Recon::FactorialGaussian(_) => ReconKind::FactorialGaussian,
            Recon::Nade(_) => ReconKind::Nade,
            Recon::Rnade(_) => ReconKind::Rnade,
        }
    }

    pub fn data_kind(&self) -> DataKind {
        self.kind().data_kind()
    }

    pub fn n_dims(&self) -> usize {
        match self {
            Recon::FactorialBernoulli { n_dims } => *n_dims,
            Recon::FactorialGaussian(g) => g.log_scale.len(),
            Recon::Nade(p) => p.n_dims(),
            Recon::Rnade(p) => p.n_dims(),
        }
    }

    /// Length of the conditional hidden-bias vector.
    pub fn cond_hidden_len(&self) -> usize {
        match self {
            Recon::Nade(p) => p.hidden(),
            Recon::Rnade(p) => p.hidden(),
            _ => 0,
        }
    }

    /// Length of the conditional output-bias vector.
    pub fn cond_output_len(&self) -> usize {
        match self {
            Recon::Rnade(p) => p.cond_output_len(),
            other => other.n_dims(),
        }
    }

    pub fn log_prob(&self, cond: &CondBiases, x: &[f64]) -> Result<f64> {
        match self {
            Recon::FactorialBernoulli { .. } => bernoulli_log_prob(&cond.b, x),
            Recon::FactorialGaussian(g) => gaussian_log_prob(&cond.b, g.log_scale.as_slice(), x),
            Recon::Nade(p) => nade_log_likelihood(p, cond, x),
            Recon::Rnade(p) => rnade_log_density(p, cond, x),
        }
    }

    /// Adds `scale · ∇ log P(x | cond)` into `grads`; returns the
    /// log-probability and `scale · ∂/∂cond`.
    pub fn accumulate_gradients(
        &self,
        cond: &CondBiases,
        x: &[f64],
        scale: f64,
        grads: &mut Recon,
    ) -> Result<(f64, CondBiases)> {
        match (self, grads) {
            (Recon::FactorialBernoulli { .. }, Recon::FactorialBernoulli { .. }) => {
                let lp = bernoulli_log_prob(&cond.b, x)?;
                let d = bernoulli_logit_gradient(&cond.b, x);
                Ok((
                    lp,
                    CondBiases {
                        c: Vec::new(),
                        b: d.iter().map(|v| scale * v).collect(),
                    },
                ))
            }
            (Recon::FactorialGaussian(g), Recon::FactorialGaussian(gg)) => {
                let lp = gaussian_log_prob(&cond.b, g.log_scale.as_slice(), x)?;
                let (d_mu, d_s) = gaussian_gradients(&cond.b, g.log_scale.as_slice(), x);
                axpy(scale, &d_s, gg.log_scale.as_mut_slice());
                Ok((
                    lp,
                    CondBiases {
                        c: Vec::new(),
                        b: d_mu.iter().map(|v| scale * v).collect(),
                    },
                ))
            }
            (Recon::Nade(p), Recon::Nade(g)) => nade_accumulate_gradients(p, cond, x, scale, g),
            (Recon::Rnade(p), Recon::Rnade(g)) => rnade_accumulate_gradients(p, cond, x, scale, g),
            _ => Err(Error::Shape(
                "gradient buffer is a different distribution family".into(),
            )),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, cond: &CondBiases, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Recon::FactorialBernoulli { .. } => Ok(bernoulli_sample(&cond.b, rng)),
            Recon::FactorialGaussian(g) => {
                Ok(gaussian_sample(&cond.b, g.log_scale.as_slice(), rng))
            }
            Recon::Nade(p) => nade_sample(p, cond, rng),
            Recon::Rnade(p) => rnade_sample(p, cond, rng),
        }
    }

    pub fn ordering(&self) -> Option<&[usize]> {
        match self {
            Recon::Nade(p) => Some(p.ordering()),
            Recon::Rnade(p) => Some(p.ordering()),
            _ => None,
        }
    }
}

impl Params for Recon {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        match self {
            Recon::FactorialBernoulli { .. } => Vec::new(),
            Recon::FactorialGaussian(g) => vec![("factorial.log_scale".into(), &g.log_scale)],
            Recon::Nade(p) => p.tensors(),
            Recon::Rnade(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            Recon::FactorialBernoulli { .. } => Vec::new(),
            Recon::FactorialGaussian(g) => vec![("factorial.log_scale".into(), &mut g.log_scale)],
            Recon::Nade(p) => p.tensors_mut(),
            Recon::Rnade(p) => p.tensors_mut(),
        }
    }
}

/// `log N(x; μ, σ²)`, exposed for tests and the spiral tooling.
pub fn normal_log_density(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * (2.0 * PI).ln() - sigma.ln() - 0.5 * z * z
}
