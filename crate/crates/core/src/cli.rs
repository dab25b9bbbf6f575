//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/parse/IO error, 3 numerical
//! divergence or failed gradient check.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{self, DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::eval::{self, CovarianceSource};
use crate::gradcheck;
use crate::latent::{CovParams, Head};
use crate::losses::{LossWeights, ReconKind};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;
use crate::trainer::{self, TrainSettings};
use crate::viz;

#[derive(Debug, Parser)]
#[command(name = "devae", version, about = "Entropy-regularized VAEs for parametric and inverse 2-D projections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled Gaussian-blob dataset as CSV.
    Synth(SynthArgs),
    /// Compute a 2-D PCA projection CSV.
    Pca(PcaArgs),
    /// Train one model and write a checkpoint and a JSON report.
    Train(TrainArgs),
    /// Train every requested head over several seeds and print a metrics table.
    Matrix(MatrixArgs),
    /// Print the loss breakdown of a checkpoint on one split as JSON.
    Eval(EvalArgs),
    /// Write per-sample latent means and covariance parameters as CSV.
    Project(ProjectArgs),
    /// Decode an evenly spaced grid over a projection into a PGM sheet.
    Reconstruct(ReconstructArgs),
    /// Render the latent means with per-class medoid ellipses as SVG.
    LatentPlot(LatentPlotArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 600)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    dims: usize,
    #[arg(long, default_value_t = 3)]
    blobs: usize,
    #[arg(long, default_value_t = 0.5)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// IDX image file or CSV of vectors
    #[arg(long)]
    data: PathBuf,
    /// IDX label file; CSV input carries labels in a `label` column
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Seed of the 80/10/10 train/val/test assignment
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Debug, Args)]
struct PcaArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, default_value = "full")]
    head: Head,
    #[arg(long)]
    lambda_proj: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lambda_ent: Option<f64>,
    /// Defaults to bce for IDX input and mse for CSV input
    #[arg(long)]
    recon: Option<ReconKind>,
    #[arg(long, value_delimiter = ',', default_values_t = [512usize, 128])]
    encoder_widths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [128usize, 512])]
    decoder_widths: Vec<usize>,
}

#[derive(Debug, Args)]
struct TrainingArgs {
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    proj: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Record wall-clock time in the report
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
struct MatrixArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    proj: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// `all` or a comma-separated list of heads
    #[arg(long, default_value = "all")]
    heads: String,
    /// First seed; run i uses seed + i
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap on worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Also write the table with every run as JSON
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    proj: PathBuf,
    #[command(flatten)]
    split_seed: SplitArgs,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    proj: PathBuf,
    #[arg(long, default_value_t = 5)]
    grid: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlotSplit {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
struct LatentPlotArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Only checked for a matching row count
    #[arg(long)]
    proj: Option<PathBuf>,
    #[command(flatten)]
    split_seed: SplitArgs,
    #[arg(long, value_enum, default_value_t = PlotSplit::Test)]
    split: PlotSplit,
    #[arg(long, value_delimiter = ',', default_values_t = [1u32, 2, 3])]
    k: Vec<u32>,
    #[arg(long, value_enum, default_value_t = CovChoice::Medoid)]
    covariance: CovChoice,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CovChoice {
    Medoid,
    ClassMean,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::InvalidArgument(_) => 1,
        Error::Divergence { .. } | Error::GradientCheck(_) => 3,
        _ => 2,
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Pca(a) => pca(a),
        Command::Train(a) => train(a),
        Command::Matrix(a) => matrix(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Project(a) => project(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::LatentPlot(a) => latent_plot(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }?;
    Ok(0)
}

fn synth(a: SynthArgs) -> Result<()> {
    let blobs = data::make_blobs(a.n, a.dims, a.blobs, a.spread, a.seed)?;
    data::write_csv_vectors(&a.out, &blobs.x, Some(&blobs.labels))
}

struct Loaded {
    x: Tensor,
    labels: Option<Vec<i64>>,
    is_idx: bool,
}

fn load(a: &DataArgs) -> Result<Loaded> {
    let (x, labels) = data::load_vectors(&a.data, a.labels.as_deref())?;
    let magic = fs::read(&a.data)?.get(..4).map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")));
    Ok(Loaded {
        x,
        labels,
        is_idx: magic == Some(data::IDX_IMAGES_MAGIC),
    })
}

fn dataset_name(p: &Path) -> String {
    p.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned())
}

fn bundle(loaded: Loaded, a: &DataArgs, proj: &Path, split_seed: u64) -> Result<DatasetBundle> {
    let y = data::read_projection_csv(proj)?;
    if y.rows() != loaded.x.rows() {
        return Err(Error::shape("projection rows vs data rows", y.shape(), loaded.x.shape()));
    }
    let split = trainer::split_dataset(loaded.x.rows(), split_seed)?;
    DatasetBundle::new(dataset_name(&a.data), loaded.x, loaded.labels, y, split)
}

fn pca(a: PcaArgs) -> Result<()> {
    let loaded = load(&a.data)?;
    let y = data::pca_project(&loaded.x)?;
    data::write_projection_csv(&a.out, &y, loaded.labels.as_deref())
}

fn model_config(m: &ModelArgs, d: usize, is_idx: bool, seed: u64) -> Result<ModelConfig> {
    let recon = m.recon.unwrap_or(if is_idx { ReconKind::Bce } else { ReconKind::Mse });
    let default = LossWeights::default();
    if recon == ReconKind::Mse && (m.lambda_proj.is_none() || m.lambda_ent.is_none()) {
        eprintln!(
            "warning: using default loss weights (lambda-proj {}, lambda-ent {}) with mse reconstruction; \
             suitable weights are dataset-specific",
            default.lambda_proj, default.lambda_ent
        );
    }
    let weights = LossWeights::new(
        m.lambda_proj.unwrap_or(default.lambda_proj),
        m.lambda_ent.unwrap_or(default.lambda_ent),
    )?;
    let config = ModelConfig {
        encoder_widths: m.encoder_widths.clone(),
        decoder_widths: m.decoder_widths.clone(),
        weights,
        seed,
        ..ModelConfig::new(d, m.head, recon)
    };
    config.validate()?;
    Ok(config)
}

fn settings(t: &TrainingArgs, seed: u64, timing: bool) -> Result<TrainSettings> {
    let s = TrainSettings {
        learning_rate: t.lr,
        batch_size: t.batch_size,
        max_epochs: t.max_epochs,
        patience: t.patience,
        seed,
        record_wall_time: timing,
        ..TrainSettings::default()
    };
    s.validate()?;
    Ok(s)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let loaded = load(&a.data)?;
    let config = model_config(&a.model, loaded.x.cols(), loaded.is_idx, a.seed)?;
    let settings = settings(&a.training, a.seed, a.timing)?;
    let bundle = bundle(loaded, &a.data, &a.proj, a.split.split_seed)?;
    let model = Model::new(config)?;
    let (model, report) = trainer::train(model, &bundle, &settings)?;
    model.save_checkpoint(&a.out)?;
    if let Some(r) = &a.report {
        write_json(r, &report)?;
    }
    let test = eval::evaluate(&model, &bundle, Split::Test)?;
    let summary = serde_json::json!({
        "epochs_run": report.epochs_run,
        "best_epoch": report.best_epoch,
        "test": test,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn parse_heads(s: &str) -> Result<Vec<Head>> {
    if s.trim() == "all" {
        return Ok(Head::ALL.to_vec());
    }
    let mut heads = Vec::new();
    for part in s.split(',') {
        let h: Head = part.trim().parse().map_err(|_| Error::InvalidArgument(format!("unknown head `{part}`")))?;
        if !heads.contains(&h) {
            heads.push(h);
        }
    }
    Ok(heads)
}

fn matrix(a: MatrixArgs) -> Result<()> {
    let heads = parse_heads(&a.heads)?;
    let loaded = load(&a.data)?;
    let base = model_config(&a.model, loaded.x.cols(), loaded.is_idx, a.seed)?;
    let settings = settings(&a.training, a.seed, false)?;
    let bundle = bundle(loaded, &a.data, &a.proj, a.split.split_seed)?;
    let run = || trainer::run_matrix(&bundle, &base, &heads, a.runs, &settings);
    let table = match a.threads {
        Some(0) => return Err(Error::InvalidArgument("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    if let Some(path) = &a.json_out {
        write_json(path, &table)?;
    }
    match a.format {
        Format::Text => print!("{}", table.to_text()),
        Format::Json => println!("{}", serde_json::to_string_pretty(&table)?),
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let model = Model::load_checkpoint(&a.model)?;
    let loaded = load(&a.data)?;
    let bundle = bundle(loaded, &a.data, &a.proj, a.split_seed.split_seed)?;
    let bd = eval::evaluate(&model, &bundle, a.split)?;
    println!("{}", serde_json::to_string_pretty(&bd)?);
    Ok(())
}

fn cov_columns(head: Head) -> Vec<String> {
    match head {
        Head::None => vec![],
        Head::Isotropic => vec!["log_var".into()],
        Head::Diagonal => vec!["log_var_0".into(), "log_var_1".into()],
        Head::Full => vec!["l_10".into(), "l_00_raw".into(), "l_11_raw".into()],
    }
}

fn project(a: ProjectArgs) -> Result<()> {
    let model = Model::load_checkpoint(&a.model)?;
    let loaded = load(&a.data)?;
    let latents = eval::encode_all(&model, &loaded.x)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..model.config().latent_dim).map(|j| format!("mu_{j}")));
    if model.config().latent_dim == 2 {
        header.extend(cov_columns(model.head()));
    } else {
        header.extend((0..model.head().cov_params(model.config().latent_dim)).map(|j| format!("cov_{j}")));
    }
    if loaded.labels.is_some() {
        header.push("label".into());
    }
    let mut w = csv::Writer::from_path(&a.out).map_err(csv_err)?;
    w.write_record(&header).map_err(csv_err)?;
    for (i, l) in latents.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(l.mu.iter().map(f64::to_string));
        let cov: Vec<f64> = match &l.cov {
            CovParams::None => vec![],
            CovParams::Isotropic { log_var } => vec![*log_var],
            CovParams::Diagonal { log_vars } => log_vars.clone(),
            CovParams::Full { chol_raw } => chol_raw.clone(),
        };
        rec.extend(cov.iter().map(f64::to_string));
        if let Some(labels) = &loaded.labels {
            rec.push(labels[i].to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Contract(format!("csv writer: {other:?}")),
    }
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    if a.grid < 2 {
        return Err(Error::InvalidArgument(format!("--grid must be at least 2, got {}", a.grid)));
    }
    let model = Model::load_checkpoint(&a.model)?;
    let coords = data::read_projection_csv(&a.proj)?;
    let grid = viz::decode_grid(&model, &coords, a.grid)?;
    match grid.to_pgm() {
        Ok(bytes) => fs::write(&a.out, bytes)?,
        Err(Error::NonSquareImage(d)) => {
            let fallback = a.out.with_extension("csv");
            fs::write(&fallback, grid.to_csv())?;
            let mut err = std::io::stderr();
            let _ = writeln!(
                err,
                "warning: decoded dimension {d} is not a square image; wrote {} instead",
                fallback.display()
            );
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

fn latent_plot(a: LatentPlotArgs) -> Result<()> {
    let model = Model::load_checkpoint(&a.model)?;
    let loaded = load(&a.data)?;
    let n = loaded.x.rows();
    if let Some(p) = &a.proj {
        let y = data::read_projection_csv(p)?;
        if y.rows() != n {
            return Err(Error::shape("projection rows vs data rows", y.shape(), loaded.x.shape()));
        }
    }
    let rows: Vec<usize> = match a.split {
        PlotSplit::All => (0..n).collect(),
        s => {
            let want = match s {
                PlotSplit::Train => Split::Train,
                PlotSplit::Val => Split::Val,
                _ => Split::Test,
            };
            let split = trainer::split_dataset(n, a.split_seed.split_seed)?;
            (0..n).filter(|&i| split[i] == want).collect()
        }
    };
    let x = loaded.x.select_rows(&rows)?;
    let labels: Option<Vec<i64>> = loaded.labels.map(|l| rows.iter().map(|&i| l[i]).collect());
    let latents = eval::encode_all(&model, &x)?;
    if model.config().latent_dim != 2 {
        return Err(Error::Geometry("latent plots need a 2-D latent space".into()));
    }
    let points = Tensor::matrix(latents.len(), 2, latents.iter().flat_map(|l| l.mu.clone()).collect())?;
    let source = match a.covariance {
        CovChoice::Medoid => CovarianceSource::Medoid,
        CovChoice::ClassMean => CovarianceSource::ClassMean,
    };
    let ellipses = match (&labels, model.head()) {
        (Some(l), h) if h != Head::None => eval::class_ellipses_from_latents(&latents, l, &a.k, source)?,
        _ => Vec::new(),
    };
    viz::latent_plot_svg(&points, labels.as_deref(), &ellipses, &a.out)
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let reports = gradcheck::run_suite(a.seed)?;
    let mut failed = 0;
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{status:4} head={:<9} recon={:<3} term={:<5} params={:<4} max_rel_error={:.3e}",
            r.head.name(),
            r.recon.to_string(),
            r.component.to_string(),
            r.n_params,
            r.max_rel_error
        );
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(Error::GradientCheck(format!(
            "{failed} of {} checks above tolerance {:e}",
            reports.len(),
            gradcheck::TOLERANCE
        )));
    }
    println!("all {} checks within {:e}", reports.len(), gradcheck::TOLERANCE);
    Ok(())
}
