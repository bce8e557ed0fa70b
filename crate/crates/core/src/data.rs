//! Datasets: the synthetic 2D spiral, MNIST in IDX format, binarization and
//! seeded minibatch iteration.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::{derived, seeded};

/// Smallest and largest spiral angle.
pub const SPIRAL_T_MIN: f64 = 3.0;
pub const SPIRAL_T_MAX: f64 = 12.0;
/// Radius grows linearly with the angle: `r = SPIRAL_RATE · t`.
pub const SPIRAL_RATE: f64 = 0.04;

const IDX_IMAGE_MAGIC: [u8; 4] = [0, 0, 8, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Binary,
    Continuous,
}

/// Row-major matrix of examples tagged with the kind of values it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<f64>,
    n_dims: usize,
    kind: DataKind,
}

impl Dataset {
    pub fn new(examples: Vec<f64>, n_dims: usize, kind: DataKind) -> Result<Self> {
        if n_dims == 0 {
            return Err(Error::Shape("dataset needs at least one dimension".into()));
        }
        if !examples.len().is_multiple_of(n_dims) {
            return Err(Error::Shape(format!(
                "{} values do not split into rows of {}",
                examples.len(),
                n_dims
            )));
        }
        if kind == DataKind::Binary && examples.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(
                "binary dataset holds values outside {0, 1}".into(),
            ));
        }
        if examples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset".into()));
        }
        Ok(Self {
            examples,
            n_dims,
            kind,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], kind: DataKind) -> Result<Self> {
        let n_dims = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_dims) {
            return Err(Error::Shape("rows have different lengths".into()));
        }
        Self::new(rows.concat(), n_dims, kind)
    }

    pub fn n_examples(&self) -> usize {
        self.examples.len() / self.n_dims
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn kind(&self) -> DataKind {
        self.kind
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.examples[i * self.n_dims..(i + 1) * self.n_dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.examples.chunks_exact(self.n_dims)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.examples
    }

    /// Rows `start..end` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let end = end.min(self.n_examples());
        let start = start.min(end);
        Self {
            examples: self.examples[start * self.n_dims..end * self.n_dims].to_vec(),
            n_dims: self.n_dims,
            kind: self.kind,
        }
    }

    /// Writes a two-column dataset as CSV with header `x,y`, or a wider one
    /// with header `x0,x1,...`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        if self.n_dims == 2 {
            out.push_str("x,y\n");
        } else {
            let header: Vec<String> = (0..self.n_dims).map(|i| format!("x{i}")).collect();
            out.push_str(&header.join(","));
            out.push('\n');
        }
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads a CSV written by [`Dataset::write_csv`]. The kind is continuous.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format(format!("{}: empty CSV", path.display())))?;
        let n_dims = header.split(',').count();
        let mut values = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != n_dims {
                return Err(Error::Format(format!(
                    "{}:{}: expected {} columns, found {}",
                    path.display(),
                    lineno + 2,
                    n_dims,
                    cells.len()
                )));
            }
            for c in cells {
                let v: f64 = c.trim().parse().map_err(|_| {
                    Error::Format(format!(
                        "{}:{}: bad number {c:?}",
                        path.display(),
                        lineno + 2
                    ))
                })?;
                values.push(v);
            }
        }
        Self::new(values, n_dims, DataKind::Continuous)
    }
}

/// Samples `n` points of the Archimedean spiral `r = 0.04 t`, `t ~ U(3, 12)`,
/// with isotropic Gaussian jitter.
pub fn gen_spiral(n: usize, jitter_std: f64, seed: u64) -> Dataset {
    gen_spiral_with_angles(n, jitter_std, seed).0
}

/// Like [`gen_spiral`], also returning the generating angle of every point.
pub fn gen_spiral_with_angles(n: usize, jitter_std: f64, seed: u64) -> (Dataset, Vec<f64>) {
    let mut rng = seeded(seed);
    let mut examples = Vec::with_capacity(2 * n);
    let mut angles = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.random_range(SPIRAL_T_MIN..SPIRAL_T_MAX);
        let (x, y) = spiral_point(t);
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        examples.push(x + jitter_std * ex);
        examples.push(y + jitter_std * ey);
        angles.push(t);
    }
    let d = Dataset {
        examples,
        n_dims: 2,
        kind: DataKind::Continuous,
    };
    (d, angles)
}

/// The noiseless spiral at angle `t`.
pub fn spiral_point(t: f64) -> (f64, f64) {
    let r = SPIRAL_RATE * t;
    (r * t.sin(), r * t.cos())
}

pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Loads an IDX image file (optionally gzipped) with pixels scaled to [0, 1].
pub fn load_mnist_idx(images_path: &Path, max_examples: Option<usize>) -> Result<Dataset> {
    let bytes = read_maybe_gz(images_path)?;
    parse_idx_images(&bytes, max_examples).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", images_path.display())),
        other => other,
    })
}

pub fn parse_idx_images(bytes: &[u8], max_examples: Option<usize>) -> Result<Dataset> {
    if bytes.len() < 16 {
        return Err(Error::Format("IDX header truncated".into()));
    }
    if bytes[..4] != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX magic: expected 00 00 08 03 (unsigned-byte images), found {:02x} {:02x} {:02x} {:02x}",
            bytes[0], bytes[1], bytes[2], bytes[3]
        )));
    }
    let be = |at: usize| {
        u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize
    };
    let (count, rows, cols) = (be(4), be(8), be(12));
    let n_dims = rows * cols;
    if n_dims == 0 {
        return Err(Error::Format("IDX image dimensions are zero".into()));
    }
    let payload = &bytes[16..];
    let needed = count
        .checked_mul(n_dims)
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    if payload.len() < needed {
        return Err(Error::Format(format!(
            "IDX payload truncated: header promises {needed} bytes, found {}",
            payload.len()
        )));
    }
    let keep = max_examples.map_or(count, |m| m.min(count));
    let examples = payload[..keep * n_dims]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Dataset::new(examples, n_dims, DataKind::Continuous)
}

/// Encodes images as an uncompressed IDX file; values in [0, 1] are mapped to
/// bytes by rounding `v · 255`.
pub fn encode_idx_images(d: &Dataset, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows * cols != d.n_dims() {
        return Err(Error::Shape(format!(
            "{rows}x{cols} images do not match {} dims",
            d.n_dims()
        )));
    }
    let mut out = Vec::with_capacity(16 + d.as_slice().len());
    out.extend_from_slice(&IDX_IMAGE_MAGIC);
    for v in [d.n_examples(), rows, cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    out.extend(
        d.as_slice()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn write_idx_images(path: &Path, d: &Dataset, rows: usize, cols: usize) -> Result<()> {
    let bytes = encode_idx_images(d, rows, cols)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Thresholds a continuous dataset: `v ≥ threshold ↦ 1`, otherwise `0`.
pub fn binarize(d: &Dataset, threshold: f64) -> Result<Dataset> {
    if d.kind == DataKind::Binary {
        return Err(Error::Data("dataset is already binary".into()));
    }
    Ok(Dataset {
        examples: d
            .examples
            .iter()
            .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
            .collect(),
        n_dims: d.n_dims,
        kind: DataKind::Binary,
    })
}

/// Seeded epoch-wise shuffling over example indices.
#[derive(Debug, Clone)]
pub struct MinibatchPlan {
    batch_size: usize,
    seed: u64,
    epoch: usize,
    cursor: usize,
    permutation: Vec<usize>,
}

impl MinibatchPlan {
    pub fn new(n_examples: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if batch_size > n_examples {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch_size} exceeds {n_examples} examples"
            )));
        }
        Ok(Self {
            batch_size,
            seed,
            epoch: 0,
            cursor: 0,
            permutation: epoch_permutation(n_examples, seed, 0),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Number of batches per epoch; the final batch may be short.
    pub fn batches_per_epoch(&self) -> usize {
        self.permutation.len().div_ceil(self.batch_size)
    }
}

/// The shuffle order used for `epoch`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut derived(seed, &[epoch as u64]));
    perm
}

#[derive(Debug, Clone)]
pub struct Minibatch<'d> {
    pub epoch: usize,
    pub indices: Vec<usize>,
    data: &'d Dataset,
}

impl<'d> Minibatch<'d> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &'d [f64]> + '_ {
        self.indices.iter().map(|&i| self.data.row(i))
    }
}

/// Returns the next batch and advances the plan, reshuffling at epoch ends.
pub fn next_minibatch<'d>(d: &'d Dataset, plan: &mut MinibatchPlan) -> Result<Minibatch<'d>> {
    if plan.permutation.len() != d.n_examples() {
        return Err(Error::Shape(format!(
            "plan built for {} examples, dataset has {}",
            plan.permutation.len(),
            d.n_examples()
        )));
    }
    let end = (plan.cursor + plan.batch_size).min(plan.permutation.len());
    let batch = Minibatch {
        epoch: plan.epoch,
        indices: plan.permutation[plan.cursor..end].to_vec(),
        data: d,
    };
    plan.cursor = end;
    if plan.cursor == plan.permutation.len() {
        plan.epoch += 1;
        plan.cursor = 0;
        plan.permutation = epoch_permutation(d.n_examples(), plan.seed, plan.epoch);
    }
    Ok(batch)
}
