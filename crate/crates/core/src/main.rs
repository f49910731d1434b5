use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use restain::baselines::{lab_stats, macenko_target, LabStats, MacenkoParams};
use restain::experiments::{
    histcmp_tsv, stability, stability_tsv, DyeHistograms, Normalizer, HIST_BINS, STABILITY_COEFFICIENTS,
};
use restain::image::{load_png, save_png};
use restain::losses::LossWeights;
use restain::metrics::{evaluate_set, Metric};
use restain::nn::RestainModel;
use restain::synth::{synth_corpus, SynthStyle};
use restain::train::{train, TrainConfig};
use restain::{Error, OdParams, StainMatrix};

#[derive(Parser)]
#[command(name = "restain", version, about = "Stain normalization by digital re-staining")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Incident light intensity on the 8-bit scale.
    #[arg(long, global = true, default_value_t = 255.0)]
    od_i0: f64,
    /// Minimum transmitted intensity before the logarithm.
    #[arg(long, global = true, default_value_t = 1.0)]
    od_floor: f64,
    /// Stain matrix file: three rows of three numbers (H, E, residual).
    #[arg(long, global = true)]
    stain_matrix: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-style corpus and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Images per style.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        count: u32,
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
    /// Train a re-staining model on one style of a manifest.
    Train(TrainArgs),
    /// Normalize images with a trained model or a classical baseline.
    Normalize(NormalizeArgs),
    /// Score reference/test image pairs with full-reference metrics.
    Evaluate {
        /// Manifest of `reference<TAB>test` lines.
        #[arg(long)]
        pairs: PathBuf,
        /// Comma-separated metric names, or `all`.
        #[arg(long, default_value = "all")]
        metrics: String,
        /// Report file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-stain one image with scaled dye intensities.
    Stability {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = STABILITY_COEFFICIENTS.to_vec())]
        coefficients: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Use the generated luminance instead of the input's.
        #[arg(long)]
        no_keep_l: bool,
    },
    /// Compare the dye histograms of two images.
    Histcmp {
        image_a: PathBuf,
        image_b: PathBuf,
        #[arg(long, default_value_t = HIST_BINS)]
        bins: usize,
        /// Table file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Manifest file or a directory containing `manifest.tsv`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint and loss log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "A")]
    style: String,
    #[arg(long, default_value_t = 1)]
    epochs: u32,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 256)]
    patch_size: usize,
    /// Batches per epoch; one pass over the patches by default.
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    lambda_gan: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_l1: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_staining: f64,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Restain,
    Reinhard,
    Macenko,
}

#[derive(Args)]
struct NormalizeArgs {
    #[arg(long, value_enum)]
    method: Method,
    /// Checkpoint for `restain`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Target-style image for `reinhard` or `macenko`.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Lab statistics file for `reinhard`.
    #[arg(long)]
    target_stats: Option<PathBuf>,
    /// Use the generated luminance instead of the input's.
    #[arg(long)]
    no_keep_l: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

struct RunContext {
    seed: u64,
    sm: StainMatrix,
    odp: OdParams,
}

fn context(c: &Common) -> anyhow::Result<RunContext> {
    let sm = match &c.stain_matrix {
        Some(p) => StainMatrix::load(p)?,
        None => StainMatrix::default(),
    };
    Ok(RunContext { seed: c.seed, sm, odp: OdParams::new(c.od_i0, c.od_floor)? })
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn emit(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_train(a: TrainArgs, ctx: RunContext) -> anyhow::Result<()> {
    create_dir(&a.out)?;
    let mut cfg = TrainConfig::new(&a.data, a.out.join("model.rsnm"));
    cfg.style_label = a.style;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch_size;
    cfg.patch_size = a.patch_size;
    cfg.steps_per_epoch = a.steps_per_epoch;
    cfg.seed = ctx.seed;
    cfg.weights = LossWeights::new(a.lambda_gan, a.lambda_l1, a.lambda_staining)?;
    cfg.od_params = ctx.odp;
    cfg.stain_matrix = ctx.sm;
    cfg.resume = a.resume;
    let (model, report) = train(&cfg)?;
    let log_path = a.out.join("losses.tsv");
    fs::write(&log_path, report.to_tsv()).with_context(|| format!("writing {}", log_path.display()))?;
    if let Some(last) = report.steps.last() {
        info!("final step {}: total loss {:.4}", last.step, last.total);
    }
    println!("{}", cfg.checkpoint_path.display());
    info!("trained to epoch {}", model.epoch);
    Ok(())
}

fn cmd_normalize(a: NormalizeArgs, ctx: RunContext) -> anyhow::Result<()> {
    let normalizer = match a.method {
        Method::Restain => {
            let Some(model) = &a.model else { bail!(Error::Usage("--model is required for restain".into())) };
            let m = RestainModel::load(model)?;
            Normalizer::Restain { generator: Box::new(m.generator), keep_l: !a.no_keep_l }
        }
        Method::Reinhard => match (&a.target_stats, &a.target) {
            (Some(p), _) => Normalizer::Reinhard(LabStats::load(p)?),
            (None, Some(t)) => Normalizer::Reinhard(lab_stats(&load_png(t)?)),
            (None, None) => bail!(Error::Usage("reinhard needs --target-stats or --target".into())),
        },
        Method::Macenko => {
            let Some(t) = &a.target else { bail!(Error::Usage("--target is required for macenko".into())) };
            let params = MacenkoParams::default();
            let (stain_matrix, max_concentrations) = macenko_target(&load_png(t)?, &params, &ctx.odp)?;
            Normalizer::Macenko { stain_matrix, max_concentrations, params }
        }
    };
    create_dir(&a.out)?;
    for input in &a.inputs {
        let name = input.file_name().with_context(|| format!("{} has no file name", input.display()))?;
        let dest = a.out.join(name);
        if dest.canonicalize().ok() == input.canonicalize().ok() && dest.exists() {
            bail!(Error::Usage(format!("output {} would overwrite its input", dest.display())));
        }
        let img = load_png(input)?;
        let out = normalizer.apply(&img, &ctx.sm, &ctx.odp)?;
        save_png(&out, &dest)?;
        println!("{}", dest.display());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = context(&cli.common)?;
    match cli.command {
        Command::Synth { out, count, size } => {
            let manifest =
                synth_corpus(&SynthStyle::style_a(ctx.seed), &SynthStyle::style_b(ctx.seed), count as usize, size, &out)?;
            println!("{}", manifest.display());
        }
        Command::Train(a) => cmd_train(a, ctx)?,
        Command::Normalize(a) => cmd_normalize(a, ctx)?,
        Command::Evaluate { pairs, metrics, out } => {
            let metrics = Metric::parse_list(&metrics)?;
            let report = evaluate_set(&pairs, &metrics)?;
            emit(&report.to_tsv(), out.as_deref())?;
        }
        Command::Stability { image, model, coefficients, out, no_keep_l } => {
            let m = RestainModel::load(&model)?;
            let img = load_png(&image)?;
            let rows = stability(&m.generator, &img, &coefficients, !no_keep_l, &ctx.sm, &ctx.odp)?;
            create_dir(&out)?;
            for r in &rows {
                save_png(&r.image, out.join(format!("stability_c{:.2}.png", r.coefficient)))?;
            }
            let table = stability_tsv(&rows);
            emit(&table, Some(&out.join("stability.tsv")))?;
            print!("{table}");
        }
        Command::Histcmp { image_a, image_b, bins, out } => {
            if bins == 0 {
                bail!(Error::Usage("--bins must be at least 1".into()));
            }
            let a = DyeHistograms::of_image(&load_png(&image_a)?, bins, &ctx.sm, &ctx.odp);
            let b = DyeHistograms::of_image(&load_png(&image_b)?, bins, &ctx.sm, &ctx.odp);
            emit(&histcmp_tsv(&a, &b), out.as_deref())?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Usage(_) | Error::Config(_) | Error::InvalidParam(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
