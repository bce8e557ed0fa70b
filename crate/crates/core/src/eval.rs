//! Evaluation: the CSL log-likelihood estimator, exact enumeration of small
//! binary models, the stationary distribution of an exact transition matrix,
//! KL divergence and a spurious-sample metric for 2D data.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gsn::GsnModel;
use crate::recon::{CondBiases, Recon};
use crate::tensor::log_sum_exp;

/// Largest dimension accepted by the enumeration routines (2^12 states).
pub const MAX_ENUM_DIMS: usize = 12;

const POWER_ITERATION_LIMIT: usize = 1_000_000;

/// Binary state with index `s`: bit `i` of `s` is `x_i`.
pub fn state_vector(s: usize, d: usize) -> Vec<f64> {
    (0..d).map(|i| ((s >> i) & 1) as f64).collect()
}

pub fn state_index(x: &[f64]) -> usize {
    x.iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| 1usize << i)
        .sum()
}

/// Exact `P(x | cond)` for every `x ∈ {0,1}^d`, indexed by [`state_index`].
pub fn enumerate_model_distribution(
    recon: &Recon,
    cond: &CondBiases,
    d: usize,
) -> Result<Vec<f64>> {
    if recon.data_kind() != crate::data::DataKind::Binary {
        return Err(Error::Data(
            "enumeration needs a binary distribution".into(),
        ));
    }
    if d > MAX_ENUM_DIMS {
        return Err(Error::InvalidArgument(format!(
            "{d} dims exceed the enumeration limit of {MAX_ENUM_DIMS}"
        )));
    }
    if d != recon.n_dims() {
        return Err(Error::Shape(format!(
            "distribution has {} dims, asked for {d}",
            recon.n_dims()
        )));
    }
    (0..1usize << d)
        .map(|s| recon.log_prob(cond, &state_vector(s, d)).map(f64::exp))
        .collect()
}

/// Row-stochastic matrix over `{0,1}^d`; `entries[x · n + x']` is the
/// probability of moving from `x` to `x'`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    d: usize,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(d: usize, entries: Vec<f64>) -> Result<Self> {
        let n = 1usize << d;
        Self::from_square(entries, n).map(|mut t| {
            t.d = d;
            t
        })
    }

    /// A row-stochastic matrix of arbitrary size `n` (`d` is then `0`).
    pub fn from_square(entries: Vec<f64>, n: usize) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Shape(format!(
                "{} entries for a {n}x{n} matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "transition entries must be finite and ≥ 0".into(),
            ));
        }
        for (r, row) in entries.chunks_exact(n).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("row {r} sums to {s}")));
            }
        }
        Ok(Self { d: 0, entries })
    }

    pub fn n_states(&self) -> usize {
        (self.entries.len() as f64).sqrt().round() as usize
    }

    pub fn dims(&self) -> usize {
        self.d
    }

    pub fn row(&self, x: usize) -> &[f64] {
        let n = self.n_states();
        &self.entries[x * n..(x + 1) * n]
    }

    /// `πᵀ T`.
    pub fn left_multiply(&self, pi: &[f64]) -> Vec<f64> {
        let n = self.n_states();
        let mut out = vec![0.0; n];
        for (x, &p) in pi.iter().enumerate() {
            if p != 0.0 {
                crate::tensor::axpy(p, self.row(x), &mut out);
            }
        }
        out
    }
}

/// Power iteration from the uniform distribution until the L1 change between
/// successive iterates drops below `tol`.
pub fn stationary_distribution(t: &TransitionMatrix, tol: f64) -> Result<Vec<f64>> {
    let n = t.n_states();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..POWER_ITERATION_LIMIT {
        let mut next = t.left_multiply(&pi);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let change: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if change < tol {
            return Ok(pi);
        }
    }
    Err(Error::NoConvergence(POWER_ITERATION_LIMIT))
}

/// `Σ pᵢ log(pᵢ/qᵢ)`; infinite when `q` misses part of `p`'s support.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "KL of vectors of lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi <= 0.0 {
            log::warn!("KL divergence: q has no mass where p = {pi}");
            return Ok(f64::INFINITY);
        }
        kl += pi * (pi / qi).ln();
    }
    // rounding can leave a tiny negative value when p ≈ q
    Ok(kl.max(0.0))
}

/// Fraction of generated points farther than `epsilon` from every reference
/// point (brute-force nearest neighbour).
pub fn spurious_fraction(generated: &Dataset, reference: &Dataset, epsilon: f64) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::InvalidArgument("reference set is empty".into()));
    }
    if generated.n_dims() != reference.n_dims() {
        return Err(Error::Shape("generated and reference dims differ".into()));
    }
    if generated.is_empty() {
        return Ok(0.0);
    }
    let eps2 = epsilon * epsilon;
    let spurious = generated
        .rows()
        .filter(|g| {
            !reference.rows().any(|r| {
                g.iter()
                    .zip(r.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    <= eps2
            })
        })
        .count();
    Ok(spurious as f64 / generated.n_examples() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CslReport {
    /// Mean CSL over the test set, nats per example.
    pub mean: f64,
    pub n_samples: usize,
    pub stride: usize,
    pub n_test: usize,
}

/// `table[t][s] = log P(x_t | encoder(h_s))`.
#[derive(Debug, Clone)]
pub struct CslTable {
    rows: Vec<Vec<f64>>,
}

/// Evaluates every (test point, latent) log-probability. Each latent is
/// encoded once. Rows are computed in parallel when `threads > 1`; each row
/// is independent so the result does not depend on the thread count.
pub fn csl_log_prob_table(
    m: &GsnModel,
    test: &Dataset,
    latents: &[Vec<f64>],
    threads: usize,
) -> Result<CslTable> {
    if latents.is_empty() {
        return Err(Error::InvalidArgument(
            "CSL needs at least one latent sample".into(),
        ));
    }
    m.check_data(test)?;
    let conds: Vec<CondBiases> = latents
        .iter()
        .map(|h| m.condition(h))
        .collect::<Result<_>>()?;
    let row =
        |x: &[f64]| -> Result<Vec<f64>> { conds.iter().map(|c| m.recon.log_prob(c, x)).collect() };
    let test_rows: Vec<&[f64]> = test.rows().collect();
    let rows = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| {
            test_rows
                .par_iter()
                .map(|x| row(x))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        test_rows
            .iter()
            .map(|x| row(x))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(CslTable { rows })
}

impl CslTable {
    pub fn n_test(&self) -> usize {
        self.rows.len()
    }

    pub fn n_latents(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Per-test-point CSL using the first `n_samples` latents.
    pub fn per_point(&self, n_samples: usize) -> Result<Vec<f64>> {
        if n_samples == 0 || n_samples > self.n_latents() {
            return Err(Error::InvalidArgument(format!(
                "asked for {n_samples} of {} latents",
                self.n_latents()
            )));
        }
        let log_s = (n_samples as f64).ln();
        Ok(self
            .rows
            .iter()
            .map(|r| log_sum_exp(&r[..n_samples]) - log_s)
            .collect())
    }

    /// Monte Carlo standard error of the mean CSL at `n_samples`, by batch
    /// means over `n_batches` contiguous blocks of latents (which absorbs the
    /// chain's autocorrelation) and the delta method for the logarithm.
    /// Test points share latents, so per-point errors are averaged rather
    /// than combined as independent.
    pub fn standard_error(&self, n_samples: usize, n_batches: usize) -> Result<f64> {
        if n_batches < 2 || n_samples < n_batches {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 batches and one latent per batch, got {n_batches} batches of {n_samples}"
            )));
        }
        self.per_point(n_samples)?;
        let per_batch = n_samples / n_batches;
        let used = per_batch * n_batches;
        let mut total = 0.0;
        for row in &self.rows {
            let top = row[..used]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let means: Vec<f64> = row[..used]
                .chunks(per_batch)
                .map(|c| c.iter().map(|v| (v - top).exp()).sum::<f64>() / per_batch as f64)
                .collect();
            let m = means.iter().sum::<f64>() / n_batches as f64;
            let var = means.iter().map(|b| (b - m) * (b - m)).sum::<f64>() / (n_batches - 1) as f64;
            total += (var / n_batches as f64).sqrt() / m;
        }
        Ok(total / self.rows.len().max(1) as f64)
    }

    pub fn report(&self, n_samples: usize, stride: usize) -> Result<CslReport> {
        let per = self.per_point(n_samples)?;
        Ok(CslReport {
            mean: per.iter().sum::<f64>() / per.len().max(1) as f64,
            n_samples,
            stride,
            n_test: per.len(),
        })
    }
}

/// `CSL(x) = log (1/S) Σₛ P(x | encoder(hₛ))`, averaged over the test set.
pub fn csl_estimate(
    m: &GsnModel,
    test: &Dataset,
    latents: &[Vec<f64>],
    stride: usize,
) -> Result<CslReport> {
    csl_log_prob_table(m, test, latents, 1)?.report(latents.len(), stride)
}

/// Appends `(tag, n_samples, stride, value_nats)` to a metrics CSV, writing
/// the header when the file is new.
pub fn append_metric_row(
    path: &Path,
    tag: &str,
    n_samples: usize,
    stride: usize,
    value_nats: f64,
) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    if fresh {
        line.push_str("tag,n_samples,stride,value_nats\n");
    }
    line.push_str(&format!("{tag},{n_samples},{stride},{value_nats}\n"));
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}
