//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # spiral, RNADE reconstruction
//! data.path = spiral.csv
//! model.recon = rnade
//! model.k = 5
//! corruption.kind = gaussian
//! corruption.sigma = 0.3
//! train.epochs = 200
//! seed = 1
//! ```
//!
//! Unknown and repeated keys are errors. Relative paths are resolved against
//! the directory holding the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::corruption::{CorruptionSpec, NoiseLevel};
use crate::error::{Error, Result};
use crate::gsn::{ChainInit, ModelSpec, TrainConfig, TrainMode};
use crate::net::{Activation, InitScheme, SgdConfig};
use crate::recon::ReconKind;

const KNOWN_KEYS: &[&str] = &[
    "data.path",
    "data.binarize",
    "data.max_examples",
    "test.path",
    "test.max_examples",
    "model.recon",
    "model.hidden",
    "model.nade_hidden",
    "model.k",
    "model.extra_hidden",
    "model.activation",
    "model.condition_output_biases",
    "model.init",
    "model.initial_log_scale",
    "corruption.kind",
    "corruption.sigma",
    "corruption.level",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.momentum",
    "train.weight_decay",
    "train.mode",
    "walkback.k",
    "chain.init",
    "chain.burn_in",
    "seed",
    "out_dir",
];

#[derive(Debug, Clone, PartialEq)]
pub struct DataSource {
    pub path: PathBuf,
    pub binarize: Option<f64>,
    pub max_examples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub test: Option<DataSource>,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub chain_init: ChainInit,
    pub burn_in: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

/// Raw key/value pairs in file order.
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!(
                "line {}: unknown key `{key}`",
                n + 1
            )));
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::Config(format!(
                "line {}: key `{key}` repeated",
                n + 1
            )));
        }
    }
    Ok(out)
}

struct Values {
    map: BTreeMap<String, String>,
}

impl Values {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("`{key}`: cannot parse {v:?}")))
            })
            .transpose()
    }

    fn or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => Err(Error::Config(format!(
                "`{key}`: expected a boolean, got {v:?}"
            ))),
        }
    }

    fn path(&self, key: &str, base: &Path) -> Option<PathBuf> {
        self.get(key).map(|p| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
    }
}

pub fn parse_recon(v: &str) -> Result<ReconKind> {
    match v {
        "factorial_bernoulli" => Ok(ReconKind::FactorialBernoulli),
        "factorial_gaussian" => Ok(ReconKind::FactorialGaussian),
        "nade" => Ok(ReconKind::Nade),
        "rnade" => Ok(ReconKind::Rnade),
        other => Err(Error::Config(format!("unknown model.recon {other:?}"))),
    }
}

fn recon_name(k: ReconKind) -> &'static str {
    match k {
        ReconKind::FactorialBernoulli => "factorial_bernoulli",
        ReconKind::FactorialGaussian => "factorial_gaussian",
        ReconKind::Nade => "nade",
        ReconKind::Rnade => "rnade",
    }
}

pub fn parse_chain_init(v: &str) -> Result<ChainInit> {
    match v {
        "data" => Ok(ChainInit::Data),
        "zeros" => Ok(ChainInit::Zeros),
        "uniform" => Ok(ChainInit::Uniform),
        other => Err(Error::Config(format!("unknown chain init {other:?}"))),
    }
}

fn chain_init_name(c: ChainInit) -> &'static str {
    match c {
        ChainInit::Data => "data",
        ChainInit::Zeros => "zeros",
        ChainInit::Uniform => "uniform",
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// `n_dims` is filled in later from the data; it is 0 here.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let v = Values {
            map: parse_flat(text)?,
        };
        let data = DataSource {
            path: v
                .path("data.path", base)
                .ok_or_else(|| Error::Config("`data.path` is required".into()))?,
            binarize: v.parse("data.binarize")?,
            max_examples: v.parse("data.max_examples")?,
        };
        let test = v.path("test.path", base).map(|path| -> Result<DataSource> {
            Ok(DataSource {
                path,
                binarize: v.parse("data.binarize")?,
                max_examples: v.parse("test.max_examples")?,
            })
        });
        let test = test.transpose()?;
        let recon = parse_recon(v.get("model.recon").unwrap_or("nade"))?;
        let corruption = match v.get("corruption.kind") {
            Some("gaussian") => CorruptionSpec::Gaussian {
                sigma: v.parse("corruption.sigma")?.ok_or_else(|| {
                    Error::Config("gaussian corruption needs `corruption.sigma`".into())
                })?,
            },
            Some("salt_pepper") => CorruptionSpec::SaltPepper {
                level: match v.get("corruption.level") {
                    Some("dynamic") => NoiseLevel::Dynamic,
                    Some(_) => NoiseLevel::Fixed(v.parse("corruption.level")?.expect("present")),
                    None => {
                        return Err(Error::Config(
                            "salt_pepper corruption needs `corruption.level`".into(),
                        ))
                    }
                },
            },
            Some(other) => return Err(Error::Config(format!("unknown corruption.kind {other:?}"))),
            None => return Err(Error::Config("`corruption.kind` is required".into())),
        };
        if matches!(corruption, CorruptionSpec::Gaussian { .. })
            && v.get("corruption.level").is_some()
        {
            return Err(Error::Config(
                "`corruption.level` only applies to salt_pepper".into(),
            ));
        }
        if matches!(corruption, CorruptionSpec::SaltPepper { .. })
            && v.get("corruption.sigma").is_some()
        {
            return Err(Error::Config(
                "`corruption.sigma` only applies to gaussian".into(),
            ));
        }
        let defaults = ModelSpec::new(recon, 0, corruption);
        let model = ModelSpec {
            hidden: v.or("model.hidden", defaults.hidden)?,
            nade_hidden: v.or("model.nade_hidden", defaults.nade_hidden)?,
            k: v.or("model.k", defaults.k)?,
            extra_hidden: v.parse("model.extra_hidden")?,
            activation: match v.get("model.activation") {
                None | Some("tanh") => Activation::Tanh,
                Some("sigmoid") => Activation::Sigmoid,
                Some(o) => return Err(Error::Config(format!("unknown model.activation {o:?}"))),
            },
            condition_output_biases: v.bool_or("model.condition_output_biases", true)?,
            init: match v.get("model.init") {
                None | Some("uniform_fan") => InitScheme::UniformFan,
                Some("zeros") => InitScheme::Zeros,
                Some(o) => return Err(Error::Config(format!("unknown model.init {o:?}"))),
            },
            initial_log_scale: v.or("model.initial_log_scale", defaults.initial_log_scale)?,
            ..defaults
        };
        let seed = v.or("seed", 0u64)?;
        let train_defaults = TrainConfig::default();
        let train = TrainConfig {
            epochs: v.or("train.epochs", train_defaults.epochs)?,
            batch_size: v.or("train.batch_size", train_defaults.batch_size)?,
            sgd: SgdConfig {
                learning_rate: v.or("train.lr", train_defaults.sgd.learning_rate)?,
                momentum: v.or("train.momentum", train_defaults.sgd.momentum)?,
                weight_decay: v.or("train.weight_decay", train_defaults.sgd.weight_decay)?,
            },
            mode: match v.get("train.mode") {
                None | Some("plain") => TrainMode::Plain,
                Some("walkback") => TrainMode::Walkback,
                Some(o) => return Err(Error::Config(format!("unknown train.mode {o:?}"))),
            },
            walkback_k: v.or("walkback.k", train_defaults.walkback_k)?,
            seed,
            threads: 1,
        };
        train.sgd.validate()?;
        Ok(Self {
            data,
            test,
            model,
            train,
            chain_init: parse_chain_init(v.get("chain.init").unwrap_or("data"))?,
            burn_in: v.or("chain.burn_in", 0)?,
            seed,
            out_dir: v.path("out_dir", base),
        })
    }

    /// The fully resolved configuration in the same flat format; parsing it
    /// back yields an identical configuration.
    pub fn to_flat_string(&self) -> String {
        let mut lines = vec![format!("data.path = {}", self.data.path.display())];
        if let Some(t) = self.data.binarize {
            lines.push(format!("data.binarize = {t}"));
        }
        if let Some(n) = self.data.max_examples {
            lines.push(format!("data.max_examples = {n}"));
        }
        if let Some(test) = &self.test {
            lines.push(format!("test.path = {}", test.path.display()));
            if let Some(n) = test.max_examples {
                lines.push(format!("test.max_examples = {n}"));
            }
        }
        let m = &self.model;
        lines.push(format!("model.recon = {}", recon_name(m.recon)));
        lines.push(format!("model.hidden = {}", m.hidden));
        lines.push(format!("model.nade_hidden = {}", m.nade_hidden));
        lines.push(format!("model.k = {}", m.k));
        if let Some(e) = m.extra_hidden {
            lines.push(format!("model.extra_hidden = {e}"));
        }
        lines.push(format!(
            "model.activation = {}",
            match m.activation {
                Activation::Tanh => "tanh",
                Activation::Sigmoid => "sigmoid",
            }
        ));
        lines.push(format!(
            "model.condition_output_biases = {}",
            m.condition_output_biases
        ));
        lines.push(format!(
            "model.init = {}",
            match m.init {
                InitScheme::UniformFan => "uniform_fan",
                InitScheme::Zeros => "zeros",
            }
        ));
        lines.push(format!("model.initial_log_scale = {}", m.initial_log_scale));
        match m.corruption {
            CorruptionSpec::Gaussian { sigma } => {
                lines.push("corruption.kind = gaussian".into());
                lines.push(format!("corruption.sigma = {sigma}"));
            }
            CorruptionSpec::SaltPepper { level } => {
                lines.push("corruption.kind = salt_pepper".into());
                lines.push(match level {
                    NoiseLevel::Fixed(l) => format!("corruption.level = {l}"),
                    NoiseLevel::Dynamic => "corruption.level = dynamic".into(),
                });
            }
        }
        let t = &self.train;
        lines.push(format!("train.epochs = {}", t.epochs));
        lines.push(format!("train.batch_size = {}", t.batch_size));
        lines.push(format!("train.lr = {}", t.sgd.learning_rate));
        lines.push(format!("train.momentum = {}", t.sgd.momentum));
        lines.push(format!("train.weight_decay = {}", t.sgd.weight_decay));
        lines.push(format!(
            "train.mode = {}",
            match t.mode {
                TrainMode::Plain => "plain",
                TrainMode::Walkback => "walkback",
            }
        ));
        lines.push(format!("walkback.k = {}", t.walkback_k));
        lines.push(format!("chain.init = {}", chain_init_name(self.chain_init)));
        lines.push(format!("chain.burn_in = {}", self.burn_in));
        lines.push(format!("seed = {}", self.seed));
        if let Some(o) = &self.out_dir {
            lines.push(format!("out_dir = {}", o.display()));
        }
        lines.join("\n") + "\n"
    }
}
