//! The `gsn` command-line tool.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::checkpoint::{
    load_checkpoint, load_dataset, save_checkpoint, save_dataset, CONTAINER_MAGIC,
};
use crate::config::ExperimentConfig;
use crate::data::{binarize, gen_spiral, load_mnist_idx, read_maybe_gz, DataKind, Dataset};
use crate::error::{Error, Result};
use crate::eval::{append_metric_row, csl_log_prob_table};
use crate::gsn::{
    chain_rng, collect_latents, initial_state, run_chain, train, ChainInit, GsnModel,
};
use crate::random::seeded;

#[derive(Debug, Parser)]
#[command(
    name = "gsn",
    version,
    about = "Generative stochastic networks with NADE/RNADE reconstruction"
)]
pub struct Cli {
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Output directory; relative `--out` paths are placed in it.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Record elapsed seconds in metrics.csv (otherwise 0, keeping reruns
    /// byte-identical).
    #[arg(long, global = true)]
    pub wall_clock: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset file.
    #[command(subcommand)]
    GenData(GenData),
    /// Train a model as described by `--config`.
    Train,
    /// Run a sampling chain from a checkpoint.
    Sample(SampleArgs),
    /// Estimate test log-likelihood with the conservative sampling-based estimator.
    EvalCsl(EvalCslArgs),
}

#[derive(Debug, Subcommand)]
pub enum GenData {
    /// Noisy 2-D spiral points as CSV.
    Spiral {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.02)]
        jitter: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Binarized MNIST-format images.
    Mnist {
        /// IDX image file, optionally gzipped.
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        binarize: f64,
        #[arg(long)]
        max_examples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Render {
    /// Grid for square image dimensions, scatter CSV for 2-D, CSV only otherwise.
    Auto,
    Grid,
    Scatter,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Data,
    Zeros,
    Uniform,
}

impl From<InitArg> for ChainInit {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Data => ChainInit::Data,
            InitArg::Zeros => ChainInit::Zeros,
            InitArg::Uniform => ChainInit::Uniform,
        }
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub n_steps: usize,
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    /// Sample CSV; an image grid goes next to it with a `.pgm` extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Render::Auto)]
    pub render: Render,
    /// Chain start; defaults to the config's `chain.init`, else `uniform`.
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Dataset for `--init data`; defaults to the config's `data.path`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub binarize: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalCslArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test set (CSV, IDX or dataset container); defaults to the config's `test.path`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Metrics CSV to append to.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "csl")]
    pub tag: String,
    #[arg(long)]
    pub max_test: Option<usize>,
    /// Threshold for grayscale test images when the model is binary.
    #[arg(long)]
    pub binarize: Option<f64>,
    /// Chain steps discarded before the first latent.
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Dataset for `--init data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 1,
        Error::Io { .. }
        | Error::Format(_)
        | Error::Data(_)
        | Error::Shape(_)
        | Error::NonFinite(_) => 2,
        Error::Diverged { .. } | Error::NoConvergence(_) => 3,
    }
}

/// Parses `args` and runs the command, returning the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::InvalidArgument(
            "--threads must be at least 1".into(),
        ));
    }
    let config = cli
        .config
        .as_deref()
        .map(ExperimentConfig::from_file)
        .transpose()?;
    match &cli.command {
        Command::GenData(g) => gen_data(cli, g),
        Command::Train => {
            let config = config.ok_or_else(|| Error::Config("train needs --config".into()))?;
            cmd_train(cli, config)
        }
        Command::Sample(a) => cmd_sample(cli, config.as_ref(), a),
        Command::EvalCsl(a) => cmd_eval_csl(cli, config.as_ref(), a),
    }
}

fn output_path(cli: &Cli, p: &Path) -> Result<PathBuf> {
    let p = match &cli.out_dir {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    };
    if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(p)
}

fn seed(cli: &Cli, config: Option<&ExperimentConfig>) -> u64 {
    cli.seed.or(config.map(|c| c.seed)).unwrap_or(0)
}

/// Loads a dataset container, an IDX image file (gzip allowed) or a CSV,
/// chosen by the file's leading bytes.
fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

pub fn load_data_file(
    path: &Path,
    binarize_at: Option<f64>,
    max_examples: Option<usize>,
) -> Result<Dataset> {
    let head = read_maybe_gz(path)?;
    let mut d = if head.starts_with(CONTAINER_MAGIC) {
        load_dataset(path)?
    } else if head.starts_with(&[0, 0, 8]) {
        load_mnist_idx(path, max_examples)?
    } else {
        // a CSV holding only 0s and 1s is taken as binary data
        let d = Dataset::read_csv(path)?;
        if !d.is_empty() && d.as_slice().iter().all(|&v| v == 0.0 || v == 1.0) {
            Dataset::new(d.as_slice().to_vec(), d.n_dims(), DataKind::Binary)?
        } else {
            d
        }
    };
    if let Some(n) = max_examples {
        if d.n_examples() > n {
            d = d.slice(0, n);
        }
    }
    match (binarize_at, d.kind()) {
        (Some(t), DataKind::Continuous) => binarize(&d, t),
        _ => Ok(d),
    }
}

fn gen_data(cli: &Cli, g: &GenData) -> Result<()> {
    match g {
        GenData::Spiral { n, jitter, out } => {
            if !(jitter.is_finite() && *jitter >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "--jitter must be non-negative, got {jitter}"
                )));
            }
            let out = output_path(cli, out)?;
            gen_spiral(*n, *jitter, cli.seed.unwrap_or(0)).write_csv(&out)?;
            log::info!("wrote {n} spiral points to {}", out.display());
        }
        GenData::Mnist {
            images,
            binarize: threshold,
            max_examples,
            out,
        } => {
            let d = binarize(&load_mnist_idx(images, *max_examples)?, *threshold)?;
            let out = output_path(cli, out)?;
            save_dataset(&out, &d)?;
            log::info!(
                "wrote {} binarized images to {}",
                d.n_examples(),
                out.display()
            );
        }
    }
    Ok(())
}

fn hyperparameters(config: &ExperimentConfig) -> serde_json::Map<String, serde_json::Value> {
    let t = &config.train;
    let v = json!({
        "epochs": t.epochs,
        "batch_size": t.batch_size,
        "learning_rate": t.sgd.learning_rate,
        "momentum": t.sgd.momentum,
        "weight_decay": t.sgd.weight_decay,
        "mode": t.mode,
        "walkback_k": t.walkback_k,
        "seed": t.seed,
    });
    match v {
        serde_json::Value::Object(m) => m,
        _ => unreachable!(),
    }
}

fn cmd_train(cli: &Cli, mut config: ExperimentConfig) -> Result<()> {
    if let Some(s) = cli.seed {
        config.seed = s;
        config.train.seed = s;
    }
    config.train.threads = cli.threads;
    if let Some(dir) = &cli.out_dir {
        config.out_dir = Some(dir.clone());
    }
    let out_dir = absolute(config.out_dir.as_ref().ok_or_else(|| {
        Error::Config("no output directory: set `out_dir` or pass --out-dir".into())
    })?)?;
    config.out_dir = Some(out_dir.clone());
    for p in std::iter::once(&config.data.path).chain(config.test.as_ref().map(|t| &t.path)) {
        if !p.is_file() {
            return Err(Error::Config(format!(
                "data file {} does not exist",
                p.display()
            )));
        }
    }
    // absolute paths so config.resolved can be rerun from its own directory
    config.data.path = absolute(&config.data.path)?;
    if let Some(t) = config.test.as_mut() {
        t.path = absolute(&t.path)?;
    }
    let data = load_data_file(
        &config.data.path,
        config.data.binarize,
        config.data.max_examples,
    )?;
    config.model.n_dims = data.n_dims();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let resolved = out_dir.join("config.resolved");
    fs::write(&resolved, config.to_flat_string()).map_err(|e| Error::io(&resolved, e))?;

    let mut model = GsnModel::new(config.model.clone(), &mut seeded(config.seed))?;
    model.check_data(&data)?;
    let hp = hyperparameters(&config);
    let last = out_dir.join("last.gsn");
    let best = out_dir.join("best.gsn");
    let final_path = out_dir.join("final.gsn");
    save_checkpoint(&last, &model, hp.clone())?;
    if config.train.epochs == 0 {
        save_checkpoint(&best, &model, hp.clone())?;
    }

    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    writeln!(metrics, "epoch,nll_nats,grad_norm,seconds")
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut best_nll = f64::INFINITY;
    let result = train(&mut model, &data, &config.train, |m, r| {
        let seconds = if cli.wall_clock { r.seconds } else { 0.0 };
        writeln!(metrics, "{},{},{},{}", r.epoch, r.nll, r.grad_norm, seconds)
            .and_then(|_| metrics.flush())
            .map_err(|e| Error::io(&metrics_path, e))?;
        save_checkpoint(&last, m, hp.clone())?;
        if r.nll < best_nll {
            best_nll = r.nll;
            save_checkpoint(&best, m, hp.clone())?;
        }
        Ok(())
    });
    match result {
        Ok(_) => {
            save_checkpoint(&final_path, &model, hp)?;
            log::info!("wrote {}", final_path.display());
            Ok(())
        }
        Err(e) => {
            if matches!(e, Error::Diverged { .. }) {
                eprintln!("last good checkpoint kept at {}", last.display());
            }
            Err(e)
        }
    }
}

fn chain_start(
    model: &GsnModel,
    init: ChainInit,
    data_path: Option<&Path>,
    binarize_at: Option<f64>,
    seed: u64,
) -> Result<Vec<f64>> {
    let data = match init {
        ChainInit::Data => {
            let p = data_path.ok_or_else(|| {
                Error::InvalidArgument(
                    "chain init `data` needs --data or a config with data.path".into(),
                )
            })?;
            Some(load_data_file(p, binarize_at, None)?)
        }
        _ => None,
    };
    initial_state(
        model,
        init,
        data.as_ref(),
        &mut crate::random::derived(seed, &[4]),
    )
}

fn chain_init_choice(arg: Option<InitArg>, config: Option<&ExperimentConfig>) -> ChainInit {
    arg.map(ChainInit::from)
        .or(config.map(|c| c.chain_init))
        .unwrap_or(ChainInit::Uniform)
}

fn cmd_sample(cli: &Cli, config: Option<&ExperimentConfig>, a: &SampleArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let d = model.n_dims();
    let side = (d as f64).sqrt().round() as usize;
    let render = match a.render {
        Render::Auto if d == 2 => Render::Scatter,
        Render::Auto if side * side == d && d > 2 => Render::Grid,
        Render::Auto => Render::None,
        Render::Grid if side * side != d => {
            return Err(Error::InvalidArgument(format!(
                "grid rendering needs square images, checkpoint has {d} dims"
            )))
        }
        Render::Scatter if d != 2 => {
            return Err(Error::InvalidArgument(format!(
                "scatter rendering needs 2-D data, checkpoint has {d} dims"
            )))
        }
        r => r,
    };
    let seed = seed(cli, config);
    let init = chain_init_choice(a.init, config);
    let data_path = a.data.clone().or(config.map(|c| c.data.path.clone()));
    let binarize_at = a.binarize.or(config.and_then(|c| c.data.binarize));
    let mut x0 = chain_start(&model, init, data_path.as_deref(), binarize_at, seed)?;
    let mut rng = chain_rng(seed);
    if let Some(burn) = config.map(|c| c.burn_in).filter(|&b| b > 0) {
        x0 = run_chain(&model, &x0, burn, &mut rng, burn)?
            .pop()
            .expect("final state")
            .x;
    }
    let states = run_chain(&model, &x0, a.n_steps, &mut rng, a.record_every)?;

    let out = output_path(cli, &a.out)?;
    let mut csv = String::from("step");
    if d == 2 {
        csv.push_str(",x,y");
    } else {
        (0..d).for_each(|i| csv.push_str(&format!(",x{i}")));
    }
    csv.push('\n');
    for s in &states {
        csv.push_str(&s.step.to_string());
        for v in &s.x {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    fs::write(&out, csv).map_err(|e| Error::io(&out, e))?;
    if render == Render::Grid {
        let pgm = out.with_extension("pgm");
        let rows: Vec<&[f64]> = states.iter().map(|s| s.x.as_slice()).collect();
        fs::write(&pgm, pgm_grid(&rows, side, 10)).map_err(|e| Error::io(&pgm, e))?;
        log::info!("wrote {}", pgm.display());
    }
    log::info!("wrote {} samples to {}", states.len(), out.display());
    Ok(())
}

/// Binary PGM of `side × side` tiles, `per_row` tiles per row, row-major.
/// Pixels are `round(255 · clamp(x, 0, 1))`; unused tiles stay black.
pub fn pgm_grid(samples: &[&[f64]], side: usize, per_row: usize) -> Vec<u8> {
    let n = samples.len();
    let cols = n.clamp(1, per_row);
    let grid_rows = n.div_ceil(per_row).max(1);
    let (w, h) = (cols * side, grid_rows * side);
    let mut pixels = vec![0u8; w * h];
    for (k, s) in samples.iter().enumerate() {
        let (gr, gc) = (k / per_row, k % per_row);
        for r in 0..side {
            for c in 0..side {
                let v = (s[r * side + c].clamp(0.0, 1.0) * 255.0).round() as u8;
                pixels[(gr * side + r) * w + gc * side + c] = v;
            }
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(pixels);
    out
}

fn cmd_eval_csl(cli: &Cli, config: Option<&ExperimentConfig>, a: &EvalCslArgs) -> Result<()> {
    if a.n_samples == 0 {
        return Err(Error::InvalidArgument(
            "--n-samples must be positive".into(),
        ));
    }
    if a.stride == 0 {
        return Err(Error::InvalidArgument("--stride must be positive".into()));
    }
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let test_path = a
        .test
        .clone()
        .or(config.and_then(|c| c.test.as_ref().map(|t| t.path.clone())))
        .ok_or_else(|| {
            Error::InvalidArgument("eval-csl needs --test or a config with test.path".into())
        })?;
    let binarize_at = a.binarize.or(config.and_then(|c| c.data.binarize));
    let max_test = a
        .max_test
        .or(config.and_then(|c| c.test.as_ref().and_then(|t| t.max_examples)));
    let test = load_data_file(&test_path, binarize_at, max_test)?;
    if test.kind() != model.data_kind() {
        return Err(Error::Data(format!(
            "test data is {:?} but the model expects {:?} data (pass --binarize for grayscale images)",
            test.kind(),
            model.data_kind()
        )));
    }
    model.check_data(&test)?;
    let seed = seed(cli, config);
    let init = chain_init_choice(a.init, config);
    let data_path = a.data.clone().or(config.map(|c| c.data.path.clone()));
    let x0 = chain_start(&model, init, data_path.as_deref(), binarize_at, seed)?;
    let burn_in = a.burn_in.or(config.map(|c| c.burn_in)).unwrap_or(0);
    let latents = collect_latents(
        &model,
        &x0,
        a.n_samples,
        a.stride,
        burn_in,
        &mut chain_rng(seed),
    )?;
    let report =
        csl_log_prob_table(&model, &test, &latents, cli.threads)?.report(a.n_samples, a.stride)?;
    let out = output_path(cli, &a.out)?;
    append_metric_row(&out, &a.tag, report.n_samples, report.stride, report.mean)?;
    println!(
        "{} n_samples={} stride={} n_test={} csl={:.4}",
        a.tag, report.n_samples, report.stride, report.n_test, report.mean
    );
    Ok(())
}
