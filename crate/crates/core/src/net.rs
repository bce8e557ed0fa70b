//! The conditioning encoder `x̃ ↦ (cond_c, cond_b)` with hand-written
//! backpropagation, parameter initialization and SGD with momentum.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Params, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => crate::tensor::sigmoid(z),
        }
    }

    /// Derivative expressed through the activation value `a = act(z)`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    UniformFan,
    Zeros,
}

/// Layer sizes of an encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub n_dims: usize,
    pub n_hidden: usize,
    /// Length of `cond_c` (hidden biases of a NADE; 0 for factorial outputs).
    pub nade_hidden: usize,
    /// Length of `cond_b` (output biases, logits or mixture-head offsets).
    pub n_out: usize,
    /// When false the output head is absent and `cond_b` is identically 0.
    pub condition_output: bool,
    pub activation: Activation,
}

/// One hidden layer followed by two affine heads.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w_in: Tensor,
    pub b_in: Tensor,
    pub w_head_c: Tensor,
    pub b_head_c: Tensor,
    pub w_head_b: Tensor,
    pub b_head_b: Tensor,
    shape: EncoderShape,
}

/// Activations retained by [`encoder_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub x_tilde: Vec<f64>,
    pub hidden: Vec<f64>,
    nonzero: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub cond_c: Vec<f64>,
    pub cond_b: Vec<f64>,
    pub cache: EncoderCache,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(shape: EncoderShape, scheme: InitScheme, rng: &mut R) -> Self {
        let out_rows = if shape.condition_output {
            shape.n_out
        } else {
            0
        };
        let mut p = Self {
            w_in: Tensor::zeros(&[shape.n_hidden, shape.n_dims]),
            b_in: Tensor::zeros(&[shape.n_hidden]),
            w_head_c: Tensor::zeros(&[shape.nade_hidden, shape.n_hidden]),
            b_head_c: Tensor::zeros(&[shape.nade_hidden]),
            w_head_b: Tensor::zeros(&[out_rows, shape.n_hidden]),
            b_head_b: Tensor::zeros(&[out_rows]),
            shape,
        };
        if scheme == InitScheme::UniformFan {
            fill_uniform_fan(&mut p.w_in, rng);
            fill_uniform_fan(&mut p.w_head_c, rng);
            fill_uniform_fan(&mut p.w_head_b, rng);
        }
        p
    }

    pub fn shape(&self) -> &EncoderShape {
        &self.shape
    }
}

impl Params for EncoderParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("encoder.W_in".into(), &self.w_in),
            ("encoder.b_in".into(), &self.b_in),
            ("encoder.W_head_c".into(), &self.w_head_c),
            ("encoder.b_head_c".into(), &self.b_head_c),
            ("encoder.W_head_b".into(), &self.w_head_b),
            ("encoder.b_head_b".into(), &self.b_head_b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("encoder.W_in".into(), &mut self.w_in),
            ("encoder.b_in".into(), &mut self.b_in),
            ("encoder.W_head_c".into(), &mut self.w_head_c),
            ("encoder.b_head_c".into(), &mut self.b_head_c),
            ("encoder.W_head_b".into(), &mut self.w_head_b),
            ("encoder.b_head_b".into(), &mut self.b_head_b),
        ]
    }
}

/// Fills a rank-2 tensor from `U(-√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out)))`
/// where `fan_in` is the column count and `fan_out` the row count.
pub fn fill_uniform_fan<R: Rng + ?Sized>(t: &mut Tensor, rng: &mut R) {
    if t.is_empty() {
        return;
    }
    let (fan_out, fan_in) = (t.rows(), t.cols());
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in t.as_mut_slice() {
        *v = rng.random_range(-bound..=bound);
    }
}

pub fn encoder_forward(p: &EncoderParams, x_tilde: &[f64]) -> Result<EncoderOutput> {
    let s = &p.shape;
    if x_tilde.len() != s.n_dims {
        return Err(Error::Shape(format!(
            "encoder expects {} inputs, got {}",
            s.n_dims,
            x_tilde.len()
        )));
    }
    if x_tilde.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("encoder input".into()));
    }
    // binary inputs are mostly zeros; only visit the active columns
    let nonzero: Vec<usize> = (0..s.n_dims).filter(|&j| x_tilde[j] != 0.0).collect();
    let mut hidden = p.b_in.as_slice().to_vec();
    for (r, h) in hidden.iter_mut().enumerate() {
        let row = p.w_in.row(r);
        *h += nonzero.iter().map(|&j| row[j] * x_tilde[j]).sum::<f64>();
        *h = s.activation.apply(*h);
    }
    let mut cond_c = p.b_head_c.as_slice().to_vec();
    p.w_head_c.matvec_acc(&hidden, &mut cond_c);
    let cond_b = if s.condition_output {
        let mut out = p.b_head_b.as_slice().to_vec();
        p.w_head_b.matvec_acc(&hidden, &mut out);
        out
    } else {
        vec![0.0; s.n_out]
    };
    Ok(EncoderOutput {
        cond_c,
        cond_b,
        cache: EncoderCache {
            x_tilde: x_tilde.to_vec(),
            hidden,
            nonzero,
        },
    })
}

/// Backpropagates upstream gradients wrt `(cond_c, cond_b)`, accumulating
/// parameter gradients into `grads` and returning the gradient wrt `x̃`.
pub fn encoder_backward(
    p: &EncoderParams,
    cache: &EncoderCache,
    d_cond_c: &[f64],
    d_cond_b: &[f64],
    grads: &mut EncoderParams,
) -> Result<Vec<f64>> {
    let d_pre = backward_to_preactivation(p, cache, d_cond_c, d_cond_b, grads)?;
    let mut d_x = vec![0.0; p.shape.n_dims];
    p.w_in.matvec_t_acc(&d_pre, &mut d_x);
    Ok(d_x)
}

/// [`encoder_backward`] without the input gradient, which training never needs.
pub fn encoder_backward_params(
    p: &EncoderParams,
    cache: &EncoderCache,
    d_cond_c: &[f64],
    d_cond_b: &[f64],
    grads: &mut EncoderParams,
) -> Result<()> {
    backward_to_preactivation(p, cache, d_cond_c, d_cond_b, grads).map(|_| ())
}

fn backward_to_preactivation(
    p: &EncoderParams,
    cache: &EncoderCache,
    d_cond_c: &[f64],
    d_cond_b: &[f64],
    grads: &mut EncoderParams,
) -> Result<Vec<f64>> {
    let s = &p.shape;
    if d_cond_c.len() != s.nade_hidden || d_cond_b.len() != s.n_out {
        return Err(Error::Shape(format!(
            "upstream gradients have lengths ({}, {}), expected ({}, {})",
            d_cond_c.len(),
            d_cond_b.len(),
            s.nade_hidden,
            s.n_out
        )));
    }
    if cache.hidden.len() != s.n_hidden || cache.x_tilde.len() != s.n_dims {
        return Err(Error::Shape(
            "encoder cache does not match parameters".into(),
        ));
    }
    if grads.shape != p.shape {
        return Err(Error::Shape(
            "gradient buffer does not match parameters".into(),
        ));
    }
    let mut d_hidden = vec![0.0; s.n_hidden];
    crate::tensor::axpy(1.0, d_cond_c, grads.b_head_c.as_mut_slice());
    grads.w_head_c.add_outer(1.0, d_cond_c, &cache.hidden);
    p.w_head_c.matvec_t_acc(d_cond_c, &mut d_hidden);
    if s.condition_output {
        crate::tensor::axpy(1.0, d_cond_b, grads.b_head_b.as_mut_slice());
        grads.w_head_b.add_outer(1.0, d_cond_b, &cache.hidden);
        p.w_head_b.matvec_t_acc(d_cond_b, &mut d_hidden);
    }
    let d_pre: Vec<f64> = d_hidden
        .iter()
        .zip(&cache.hidden)
        .map(|(dh, &a)| dh * s.activation.derivative_from_output(a))
        .collect();
    crate::tensor::axpy(1.0, &d_pre, grads.b_in.as_mut_slice());
    for (r, &dp) in d_pre.iter().enumerate() {
        if dp == 0.0 {
            continue;
        }
        let row = grads.w_in.row_mut(r);
        for &j in &cache.nonzero {
            row[j] += dp * cache.x_tilde[j];
        }
    }
    Ok(d_pre)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and ≥ 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight decay must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Momentum buffers, created on the first step.
#[derive(Debug, Clone)]
pub struct Velocity<P> {
    state: Option<P>,
}

impl<P> Default for Velocity<P> {
    fn default() -> Self {
        Self { state: None }
    }
}

/// `v ← μ·v − lr·(g + λ·θ)`, `θ ← θ + v`.
pub fn sgd_step<P: Params>(
    params: &mut P,
    grads: &P,
    cfg: &SgdConfig,
    velocity: &mut Velocity<P>,
) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient tensor {name}")));
    }
    let v = velocity.state.get_or_insert_with(|| params.zeros_like());
    let grad_tensors = grads.tensors();
    let vel_tensors = v.tensors_mut();
    let param_tensors = params.tensors_mut();
    if grad_tensors.len() != param_tensors.len() {
        return Err(Error::Shape("gradient and parameter sets differ".into()));
    }
    for (((name, theta), (_, g)), (_, vel)) in
        param_tensors.into_iter().zip(grad_tensors).zip(vel_tensors)
    {
        if theta.dims() != g.dims() {
            return Err(Error::Shape(format!(
                "gradient for {name} has the wrong shape"
            )));
        }
        for ((t, &gi), vi) in theta
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(vel.as_mut_slice())
        {
            *vi = cfg.momentum * *vi - cfg.learning_rate * (gi + cfg.weight_decay * *t);
            *t += *vi;
        }
    }
    Ok(())
}
