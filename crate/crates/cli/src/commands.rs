//! Subcommands of the `kspc` binary.
//!
//! Each command returns a [`RunManifest`] and writes it next to its main
//! output (`<out>.manifest`) unless `--manifest` names another path.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kspc_core::classifier::{self, LogRegConfig};
use kspc_core::encoder::{diagnostics, encode_columns, encode_iterative, Diagnostics};
use kspc_core::training::{train_from, EpochRecord, TrainConfig, TrainedModel};
use kspc_core::{DatasetMatrix, EncoderParams, Hyper, Matrix, Variant};

use crate::codes::{encode_binary, encode_csv, CodeFormat, EncodedCodes};
use crate::error::{Error, Result};
use crate::idx::{load_idx_images, load_idx_labels};
use crate::manifest::{default_path, RunManifest};
use crate::model_file::{load_model, save_model};
use crate::pgm::{export_dictionary_grid, GridSpec};

pub const DEFAULT_TRAIN_LIMIT: usize = 5000;
pub const DEFAULT_TEST_LIMIT: usize = 1000;
pub const DEFAULT_HIDDEN: usize = 100;
pub const DEFAULT_K_STAR: usize = 20;

// Picked by held-out error on the 5000/1000 MNIST subset, each variant tuned on its own.
pub const RPCA_LAMBDA_STAR: f64 = 0.01;
pub const RPCA_LAMBDA: f64 = 1.0;
pub const KSPARSE_LAMBDA_STAR: f64 = 5.0;
pub const KSPARSE_LAMBDA: f64 = 1.0;
pub const DEFAULT_EPOCHS: usize = 8;
pub const DEFAULT_BATCH: usize = 50;
// Rpca's stable rate shrinks as lambda_star grows; 0.05 is safe over the tuned range.
pub const RPCA_LR: f64 = 0.05;
pub const KSPARSE_LR: f64 = 0.2;

/// Fraction of pixels used by the support-concentration metric.
pub const CONCENTRATION_FRACTION: f64 = 0.1;

#[derive(Debug, Parser)]
#[command(
    name = "kspc",
    version,
    about = "Learned proximal-descent sparse coding (RPCA and k-sparse)"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a dictionary on IDX images and save the model.
    Train(TrainArgs),
    /// Encode IDX images with a trained model and write the codes.
    Encode(EncodeArgs),
    /// Fit a logistic regression on train codes and report the test error.
    Eval(EvalArgs),
    /// Write a grid of dictionary atoms as a PGM image.
    ExportDict(ExportArgs),
    /// Print decomposition and dictionary health metrics.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Rpca,
    Ksparse,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Rpca => Variant::Rpca,
            VariantArg::Ksparse => Variant::KSparse,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// IDX image file (magic 0x803).
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long, value_enum, default_value = "ksparse")]
    pub variant: VariantArg,
    /// Number of dictionary atoms.
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    pub hidden: usize,
    /// Unpenalized code entries (ksparse only) [default: 20].
    #[arg(long)]
    pub k_star: Option<usize>,
    /// Unpenalized outlier entries (ksparse only) [default: ceil(pixels/100)].
    #[arg(long)]
    pub k: Option<usize>,
    /// Outlier penalty weight [default: per variant].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Code penalty weight [default: per variant].
    #[arg(long)]
    pub lambda_star: Option<f64>,
    /// Unrolled layers.
    #[arg(long, default_value_t = Hyper::DEFAULT_DEPTH)]
    pub depth: usize,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: usize,
    /// Mini-batch size.
    #[arg(long, default_value_t = DEFAULT_BATCH)]
    pub batch: usize,
    /// SGD learning rate; 0 leaves the initial dictionary unchanged [default: per variant].
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use only the first N images.
    #[arg(long, default_value_t = DEFAULT_TRAIN_LIMIT)]
    pub limit: usize,
    /// Rescale atoms to unit norm after each step [default: on for ksparse].
    #[arg(long)]
    pub renormalize: Option<bool>,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path [default: <out>.manifest].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncodeMode {
    /// The model's fixed number of layers.
    Unrolled,
    /// Iterate until the relative change drops below --tol.
    Iterative,
}

#[derive(Debug, Clone, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_enum, default_value = "binary")]
    pub format: CodeFormat,
    /// Also write the outlier vectors.
    #[arg(long)]
    pub with_outliers: bool,
    #[arg(long, value_enum, default_value = "unrolled")]
    pub mode: EncodeMode,
    /// Convergence tolerance for --mode iterative.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Iteration cap for --mode iterative.
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train_images: PathBuf,
    #[arg(long)]
    pub train_labels: PathBuf,
    #[arg(long)]
    pub test_images: PathBuf,
    #[arg(long)]
    pub test_labels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TRAIN_LIMIT)]
    pub train_limit: usize,
    #[arg(long, default_value_t = DEFAULT_TEST_LIMIT)]
    pub test_limit: usize,
    /// Classifier learning rate.
    #[arg(long, default_value_t = LogRegConfig::default().learning_rate)]
    pub clf_lr: f64,
    /// Classifier epochs.
    #[arg(long, default_value_t = LogRegConfig::default().epochs)]
    pub clf_epochs: usize,
    /// Classifier L2 weight.
    #[arg(long, default_value_t = LogRegConfig::default().l2)]
    pub l2: f64,
    /// Classifier mini-batch size [default: full batch].
    #[arg(long)]
    pub clf_batch: Option<usize>,
    /// Standardize code features before fitting.
    #[arg(long)]
    pub standardize: bool,
    /// Feed [s; o] instead of s alone to the classifier.
    #[arg(long)]
    pub concat_outliers: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Manifest path [default: <model>.eval.manifest].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 28)]
    pub atom_rows: usize,
    #[arg(long, default_value_t = 28)]
    pub atom_cols: usize,
    #[arg(long, default_value_t = 10)]
    pub grid_rows: usize,
    #[arg(long, default_value_t = 10)]
    pub grid_cols: usize,
    /// Seed of the random atom subset.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output PGM file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Images to decompose; without them only dictionary metrics are printed.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Manifest path [default: <model>.diagnose.manifest].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, out).map(drop),
        Command::Encode(a) => cmd_encode(a, out).map(drop),
        Command::Eval(a) => cmd_eval(a, out).map(drop),
        Command::ExportDict(a) => cmd_export_dict(a, out).map(drop),
        Command::Diagnose(a) => cmd_diagnose(a, out).map(drop),
    }
}

fn emit(out: &mut dyn Write, line: String) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn load_limited(path: &Path, limit: Option<usize>) -> Result<DatasetMatrix> {
    let data = load_idx_images(path)?;
    Ok(match limit {
        Some(n) if n < data.num_samples() => data.take(n),
        _ => data,
    })
}

fn load_labeled(images: &Path, labels: &Path, limit: usize) -> Result<DatasetMatrix> {
    let data = load_idx_images(images)?;
    let labels = load_idx_labels(labels)?;
    let data = data.with_labels(labels)?;
    Ok(if limit < data.num_samples() {
        data.take(limit)
    } else {
        data
    })
}

fn finish(
    manifest: RunManifest,
    explicit: &Option<PathBuf>,
    fallback: PathBuf,
) -> Result<RunManifest> {
    manifest.write(explicit.as_deref().unwrap_or(&fallback))?;
    Ok(manifest)
}

/// Resolves the flags of `train` into hyperparameters, rejecting
/// combinations that do not apply to the chosen variant.
pub fn resolve_hyper(args: &TrainArgs, data_dim: usize) -> Result<Hyper> {
    let hyper = match args.variant {
        VariantArg::Rpca => {
            if args.k_star.is_some() || args.k.is_some() {
                return Err(Error::Usage(
                    "--k-star and --k only apply to --variant ksparse".into(),
                ));
            }
            Hyper::rpca(
                args.lambda_star.unwrap_or(RPCA_LAMBDA_STAR),
                args.lambda.unwrap_or(RPCA_LAMBDA),
            )
        }
        VariantArg::Ksparse => Hyper::ksparse(
            args.lambda_star.unwrap_or(KSPARSE_LAMBDA_STAR),
            args.lambda.unwrap_or(KSPARSE_LAMBDA),
            args.k_star.unwrap_or(DEFAULT_K_STAR.min(args.hidden)),
            args.k.unwrap_or(default_outlier_k(data_dim)),
        ),
    };
    Ok(hyper.with_depth(args.depth))
}

pub fn default_lr(variant: VariantArg) -> f64 {
    match variant {
        VariantArg::Rpca => RPCA_LR,
        VariantArg::Ksparse => KSPARSE_LR,
    }
}

/// Outlier support left unpenalized by default: one percent of the pixels, rounded up.
pub fn default_outlier_k(data_dim: usize) -> usize {
    data_dim.div_ceil(100)
}

fn record_epoch(manifest: &mut RunManifest, prefix: &str, r: &EpochRecord) {
    manifest.set(&format!("{prefix}objective"), r.objective);
    manifest.set(&format!("{prefix}recon_error"), r.recon_error);
    manifest.set(&format!("{prefix}code_density"), r.code_density);
    manifest.set(
        &format!("{prefix}outlier_energy_ratio"),
        r.outlier_energy_ratio,
    );
}

fn record_hyper(manifest: &mut RunManifest, h: &Hyper) {
    manifest.set("variant", h.variant.name());
    manifest.set("lambda_star", h.lambda_star);
    manifest.set("lambda", h.lambda);
    manifest.set("k_star", h.k_star);
    manifest.set("k", h.k);
    manifest.set("depth", h.depth);
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<RunManifest> {
    let start = Instant::now();
    let data = load_limited(&args.images, Some(args.limit))?;
    let hyper = resolve_hyper(args, data.dim())?;
    let mut config = TrainConfig::new(hyper, args.hidden);
    config.epochs = args.epochs;
    config.batch_size = args.batch;
    config.learning_rate = args.lr.unwrap_or(default_lr(args.variant));
    config.seed = args.seed;
    if let Some(r) = args.renormalize {
        config.renormalize_atoms = r;
    }

    let quiet = args.quiet;
    let (model, report) = train_from(&data, &config, None, |r| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  objective {:.6}  recon {:.4}  density {:.4}  outlier_ratio {:.4}",
                r.epoch, r.objective, r.recon_error, r.code_density, r.outlier_energy_ratio
            );
        }
    })?;
    save_model(&model, &args.out)?;

    let mut m = RunManifest::new("train");
    m.set("images", args.images.display());
    m.set("samples", data.num_samples());
    m.set("data_dim", data.dim());
    m.set("hidden", args.hidden);
    record_hyper(&mut m, &hyper);
    m.set("epochs", config.epochs);
    m.set("batch", config.batch_size);
    m.set("lr", config.learning_rate);
    m.set("seed", config.seed);
    m.set("renormalize", config.renormalize_atoms);
    m.set("out", args.out.display());
    record_epoch(&mut m, "initial_", &report.initial);
    record_epoch(&mut m, "final_", report.last());
    m.set(
        "support_concentration",
        model
            .dictionary
            .mean_support_concentration(CONCENTRATION_FRACTION),
    );
    m.set(
        "wall_clock_seconds",
        format!("{:.3}", start.elapsed().as_secs_f64()),
    );
    emit(out, format!("model={}", args.out.display()))?;
    emit(out, format!("final_objective={}", report.last().objective))?;
    finish(m, &args.manifest, default_path(&args.out))
}

/// Encodes every column of `x` with `params`, unrolled or to convergence.
pub fn encode_dataset(
    x: &Matrix,
    params: &EncoderParams,
    mode: EncodeMode,
    tol: f64,
    max_iter: usize,
) -> Result<(Matrix, Matrix)> {
    match mode {
        EncodeMode::Unrolled => Ok(encode_columns(x, params)?),
        EncodeMode::Iterative => {
            let (n, m) = (params.code_dim(), params.data_dim());
            let mut s = Matrix::zeros(n, x.cols());
            let mut o = Matrix::zeros(m, x.cols());
            for (j, col) in x.columns().enumerate() {
                let rep = encode_iterative(col, params, tol, max_iter)?;
                s.col_mut(j).copy_from_slice(&rep.s);
                o.col_mut(j).copy_from_slice(&rep.o);
            }
            Ok((s, o))
        }
    }
}

fn check_dims(model: &TrainedModel, data: &DatasetMatrix) -> Result<()> {
    if model.dictionary.data_dim() != data.dim() {
        return Err(Error::Core(kspc_core::Error::DimensionMismatch {
            what: "image pixels vs model data dimension",
            expected: model.dictionary.data_dim(),
            found: data.dim(),
        }));
    }
    Ok(())
}

fn record_diagnostics(m: &mut RunManifest, d: &Diagnostics) {
    m.set("recon_error", d.recon_error);
    m.set("code_density", d.code_density);
    m.set("outlier_energy_ratio", d.outlier_energy_ratio);
}

pub fn cmd_encode(args: &EncodeArgs, out: &mut dyn Write) -> Result<RunManifest> {
    let model = load_model(&args.model)?;
    let data = load_limited(&args.images, args.limit)?;
    let params = if data.num_samples() == 0 && data.dim() == 0 {
        None
    } else {
        check_dims(&model, &data)?;
        Some(model.encoder_params()?)
    };
    let (s, o) = match &params {
        Some(p) => encode_dataset(data.x(), p, args.mode, args.tol, args.max_iter)?,
        None => (
            Matrix::zeros(model.dictionary.code_dim(), 0),
            Matrix::zeros(model.dictionary.data_dim(), 0),
        ),
    };
    let diag = diagnostics(data.x(), &s, &o, model.dictionary.atoms()).ok();
    let codes = EncodedCodes {
        codes: s,
        outliers: args.with_outliers.then_some(o),
    };
    let bytes = match args.format {
        CodeFormat::Binary => encode_binary(&codes)?,
        CodeFormat::Csv => encode_csv(&codes).into_bytes(),
    };
    std::fs::write(&args.out, bytes).map_err(|e| Error::io(&args.out, e))?;

    let mut m = RunManifest::new("encode");
    m.set("model", args.model.display());
    m.set("images", args.images.display());
    m.set("samples", data.num_samples());
    m.set("format", format!("{:?}", args.format).to_lowercase());
    m.set("with_outliers", args.with_outliers);
    m.set("mode", format!("{:?}", args.mode).to_lowercase());
    if args.mode == EncodeMode::Iterative {
        m.set("tol", args.tol);
        m.set("max_iter", args.max_iter);
    }
    m.set("out", args.out.display());
    if let Some(d) = &diag {
        record_diagnostics(&mut m, d);
    }
    emit(out, format!("codes={}", args.out.display()))?;
    finish(m, &args.manifest, default_path(&args.out))
}

fn features(params: &EncoderParams, x: &Matrix, concat: bool) -> Result<Matrix> {
    let (s, o) = encode_columns(x, params)?;
    if !concat {
        return Ok(s);
    }
    let mut f = Matrix::zeros(s.rows() + o.rows(), s.cols());
    for j in 0..s.cols() {
        let col = f.col_mut(j);
        col[..s.rows()].copy_from_slice(s.col(j));
        col[s.rows()..].copy_from_slice(o.col(j));
    }
    Ok(f)
}

/// Test error in percent plus the manifest; prints `error_pct=<x.xx>`.
pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(f64, RunManifest)> {
    let model = load_model(&args.model)?;
    let train = load_labeled(&args.train_images, &args.train_labels, args.train_limit)?;
    let test = load_labeled(&args.test_images, &args.test_labels, args.test_limit)?;
    check_dims(&model, &train)?;
    check_dims(&model, &test)?;
    let params = model.encoder_params()?;
    let train_f = features(&params, train.x(), args.concat_outliers)?;
    let test_f = features(&params, test.x(), args.concat_outliers)?;

    let config = LogRegConfig {
        learning_rate: args.clf_lr,
        epochs: args.clf_epochs,
        l2: args.l2,
        seed: args.seed,
        batch_size: args.clf_batch,
        standardize: args.standardize,
    };
    let train_labels = train.labels().expect("labels attached");
    let test_labels = test.labels().expect("labels attached");
    let clf = classifier::fit(&train_f, train_labels, &config)?;
    let train_error = 100.0 * classifier::error_rate(&clf, &train_f, train_labels)?;
    let error = 100.0 * classifier::error_rate(&clf, &test_f, test_labels)?;

    let mut m = RunManifest::new("eval");
    m.set("model", args.model.display());
    record_hyper(&mut m, &model.hyper);
    m.set("train_images", args.train_images.display());
    m.set("train_labels", args.train_labels.display());
    m.set("test_images", args.test_images.display());
    m.set("test_labels", args.test_labels.display());
    m.set("train_samples", train.num_samples());
    m.set("test_samples", test.num_samples());
    m.set("features", if args.concat_outliers { "s+o" } else { "s" });
    m.set("clf_lr", config.learning_rate);
    m.set("clf_epochs", config.epochs);
    m.set("l2", config.l2);
    m.set(
        "clf_batch",
        config
            .batch_size
            .map_or("full".to_string(), |b| b.to_string()),
    );
    m.set("standardize", config.standardize);
    m.set("seed", config.seed);
    m.set("train_error_pct", format!("{train_error:.2}"));
    m.set("error_pct", format!("{error:.2}"));
    emit(out, format!("error_pct={error:.2}"))?;
    let mut fallback = args.model.as_os_str().to_owned();
    fallback.push(".eval.manifest");
    Ok((error, finish(m, &args.manifest, PathBuf::from(fallback))?))
}

pub fn cmd_export_dict(args: &ExportArgs, out: &mut dyn Write) -> Result<RunManifest> {
    let model = load_model(&args.model)?;
    let grid = GridSpec {
        atom_rows: args.atom_rows,
        atom_cols: args.atom_cols,
        grid_rows: args.grid_rows,
        grid_cols: args.grid_cols,
    };
    let img = export_dictionary_grid(model.dictionary.atoms(), grid, args.seed, &args.out)?;
    let mut m = RunManifest::new("export-dict");
    m.set("model", args.model.display());
    m.set(
        "atom_shape",
        format!("{}x{}", args.atom_rows, args.atom_cols),
    );
    m.set("grid", format!("{}x{}", args.grid_rows, args.grid_cols));
    m.set("seed", args.seed);
    m.set(
        "atoms_shown",
        grid.capacity().min(model.dictionary.code_dim()),
    );
    m.set("image_size", format!("{}x{}", img.width, img.height));
    m.set(
        "support_concentration",
        model
            .dictionary
            .mean_support_concentration(CONCENTRATION_FRACTION),
    );
    m.set("out", args.out.display());
    emit(
        out,
        format!("pgm={} seed={}", args.out.display(), args.seed),
    )?;
    finish(m, &args.manifest, default_path(&args.out))
}

pub fn cmd_diagnose(args: &DiagnoseArgs, out: &mut dyn Write) -> Result<RunManifest> {
    let model = load_model(&args.model)?;
    let mut m = RunManifest::new("diagnose");
    m.set("model", args.model.display());
    record_hyper(&mut m, &model.hyper);
    m.set("data_dim", model.dictionary.data_dim());
    m.set("code_dim", model.dictionary.code_dim());
    let concentration = model
        .dictionary
        .mean_support_concentration(CONCENTRATION_FRACTION);
    m.set("support_concentration", concentration);
    emit(out, format!("support_concentration={concentration}"))?;
    if let Some(path) = &args.images {
        let data = load_limited(path, args.limit)?;
        check_dims(&model, &data)?;
        let params = model.encoder_params()?;
        let (s, o) = encode_columns(data.x(), &params)?;
        let diag = diagnostics(data.x(), &s, &o, model.dictionary.atoms())?;
        m.set("images", path.display());
        m.set("samples", data.num_samples());
        record_diagnostics(&mut m, &diag);
        emit(out, format!("recon_error={}", diag.recon_error))?;
        emit(out, format!("code_density={}", diag.code_density))?;
        emit(
            out,
            format!("outlier_energy_ratio={}", diag.outlier_energy_ratio),
        )?;
    }
    let mut fallback = args.model.as_os_str().to_owned();
    fallback.push(".diagnose.manifest");
    finish(m, &args.manifest, PathBuf::from(fallback))
}
