//! Batch front end for the hazeforge pipeline.
//!
//! Exit codes: 0 on success, 1 when some per-item work failed, 2 for usage
//! or validation errors.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use hazeforge::dataset::{load_manifest, make_fixtures};
use hazeforge::dcp::{dark_channel, dehaze_dcp, Atmosphere, DcpConfig, DehazeOutput};
use hazeforge::imgcore::{load_image, save_field, save_image};
use hazeforge::metrics::evaluate_pairs;
use hazeforge::mlr::{dehaze_mldcp, train, Direction, TrainConfig, TrainedModel};
use hazeforge::synth::{synthesize, HazeSpec};

#[derive(Parser)]
#[command(
    name = "hazeforge",
    version,
    about = "Dehaze images, synthesize haze, and train or evaluate the regression model"
)]
struct Cli {
    /// Worker threads for batch processing (falls back to HAZEFORGE_JOBS,
    /// then the number of logical CPUs).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Remove haze from an image or every image in a directory.
    Dehaze(DehazeArgs),
    /// Add uniform synthetic haze to an image or directory of images.
    Synthesize(SynthesizeArgs),
    /// Fit regression weights on a paired clean/hazy manifest.
    Train(TrainArgs),
    /// Score a restorer over a paired manifest with PSNR and SSIM.
    Eval(EvalArgs),
    /// Generate the deterministic fixture dataset.
    Fixtures(FixturesArgs),
}

#[derive(Args, Default)]
struct DcpFlags {
    /// Dark-channel window size (odd).
    #[arg(long)]
    patch: Option<usize>,
    /// Haze removal strength in [0, 1].
    #[arg(long)]
    omega: Option<f64>,
    /// Transmission lower bound in (0, 1).
    #[arg(long)]
    t0: Option<f64>,
    /// Skip guided-filter refinement of the transmission map.
    #[arg(long)]
    no_refine: bool,
    /// Guided filter window radius.
    #[arg(long)]
    guided_radius: Option<usize>,
    /// Guided filter regularization.
    #[arg(long)]
    guided_eps: Option<f64>,
    /// Fraction of brightest dark-channel pixels considered for the airlight.
    #[arg(long)]
    bright_fraction: Option<f64>,
    /// Average the airlight candidates instead of picking the brightest.
    #[arg(long)]
    average_atmosphere: bool,
}

impl DcpFlags {
    fn any_set(&self) -> bool {
        self.patch.is_some()
            || self.omega.is_some()
            || self.t0.is_some()
            || self.no_refine
            || self.guided_radius.is_some()
            || self.guided_eps.is_some()
            || self.bright_fraction.is_some()
            || self.average_atmosphere
    }

    fn to_config(&self) -> Result<DcpConfig> {
        let mut cfg = DcpConfig::default();
        if let Some(v) = self.patch {
            cfg.patch = v;
        }
        if let Some(v) = self.omega {
            cfg.omega = v;
        }
        if let Some(v) = self.t0 {
            cfg.t0 = v;
        }
        if self.no_refine {
            cfg.refine = false;
        }
        if let Some(v) = self.guided_radius {
            cfg.guided_radius = v;
        }
        if let Some(v) = self.guided_eps {
            cfg.guided_eps = v;
        }
        if let Some(v) = self.bright_fraction {
            cfg.bright_fraction = v;
        }
        if self.average_atmosphere {
            cfg.average_atmosphere = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DehazeArgs {
    /// Input image or directory.
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    /// Trained dehaze-direction params file; without it the plain dark
    /// channel prior runs with the flag overrides below.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Also write the transmission map and dark channel next to each output.
    #[arg(long)]
    dump_intermediates: bool,
    #[command(flatten)]
    dcp: DcpFlags,
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Input image or directory of clean images.
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    /// Uniform haze density in [0, 1).
    #[arg(long)]
    density: f64,
    /// Trained synth-direction params file; without it the plain scattering
    /// model is used.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Airlight override as three values in (0, 1].
    #[arg(long, num_args = 3, value_names = ["R", "G", "B"])]
    atmosphere: Option<Vec<f32>>,
}

#[derive(Args)]
struct TrainArgs {
    /// Manifest CSV of clean/hazy pairs.
    #[arg(long)]
    manifest: PathBuf,
    /// Model direction to fit.
    #[arg(long, value_enum)]
    direction: DirectionArg,
    /// Where to write the trained params JSON.
    #[arg(long)]
    out_params: PathBuf,
    /// Where to write the per-epoch JSON-lines report
    /// (default: out-params path with a .report.jsonl extension).
    #[arg(long)]
    report: Option<PathBuf>,
    /// SGD learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Pixels per SGD step (default: one full image per step).
    #[arg(long)]
    batch: Option<usize>,
    /// Seed for the epoch shuffle.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Visit pairs in manifest order instead of shuffling.
    #[arg(long)]
    no_shuffle: bool,
    #[command(flatten)]
    dcp: DcpFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Manifest CSV of clean/hazy pairs.
    #[arg(long)]
    manifest: PathBuf,
    /// What to run on each hazy image before scoring it.
    #[arg(long, value_enum, default_value_t = RestorerArg::None)]
    restorer: RestorerArg,
    /// Trained dehaze-direction params file (required for --restorer mldcp).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Where to write the JSON summary.
    #[arg(long)]
    report_out: PathBuf,
    /// Where to write the per-pair CSV (default: report path with .csv).
    #[arg(long)]
    csv_out: Option<PathBuf>,
    #[command(flatten)]
    dcp: DcpFlags,
}

#[derive(Args)]
struct FixturesArgs {
    /// Directory to fill with fixture images and manifest.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of clean images (each gets three hazy variants).
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    Dehaze,
    Synth,
}

impl From<DirectionArg> for Direction {
    fn from(v: DirectionArg) -> Direction {
        match v {
            DirectionArg::Dehaze => Direction::Dehaze,
            DirectionArg::Synth => Direction::Synth,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RestorerArg {
    /// Score the hazy images as-is.
    None,
    /// Plain dark channel prior.
    Dcp,
    /// Trained regression model.
    Mldcp,
}

fn main() {
    let code = match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    };
    std::process::exit(code);
}

fn run() -> Result<i32> {
    let cli = Cli::parse();
    let jobs = resolve_jobs(cli.jobs)?;
    match cli.command {
        Command::Dehaze(args) => cmd_dehaze(args, jobs),
        Command::Synthesize(args) => cmd_synthesize(args, jobs),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Fixtures(args) => cmd_fixtures(args),
    }
}

fn resolve_jobs(flag: Option<usize>) -> Result<usize> {
    let jobs = match flag {
        Some(n) => n,
        None => match std::env::var("HAZEFORGE_JOBS") {
            Ok(raw) => raw
                .parse::<usize>()
                .with_context(|| format!("HAZEFORGE_JOBS value {raw:?} is not a number"))?,
            Err(_) => std::thread::available_parallelism().map_or(1, usize::from),
        },
    };
    if jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    Ok(jobs)
}

/// List input files: a single image path, or the image files directly inside
/// a directory, sorted by name for deterministic processing order.
fn collect_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.exists() {
        bail!("input {} does not exist", input.display());
    }
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("cannot read directory {}", input.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| {
                        matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg")
                    })
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Run `work` over every file on a sized worker pool, printing failures.
/// Returns exit code 1 if any item failed.
fn process_batch(
    files: &[PathBuf],
    jobs: usize,
    work: impl Fn(&Path) -> Result<()> + Sync,
) -> Result<i32> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("failed to build worker pool")?;
    let results: Vec<(usize, Result<()>)> = pool.install(|| {
        files
            .par_iter()
            .enumerate()
            .map(|(i, path)| (i, work(path)))
            .collect()
    });
    let mut failed = 0;
    for (i, result) in results {
        if let Err(e) = result {
            eprintln!("failed: {}: {e:#}", files[i].display());
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} of {} files failed", files.len());
        Ok(1)
    } else {
        Ok(0)
    }
}

fn output_path(output_dir: &Path, input: &Path) -> PathBuf {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string());
    output_dir.join(format!("{stem}.png"))
}

enum Restorer {
    Plain(DcpConfig),
    Model(Box<TrainedModel>),
}

impl Restorer {
    fn dehaze(&self, img: &hazeforge::PlanarImage) -> hazeforge::Result<DehazeOutput> {
        match self {
            Restorer::Plain(cfg) => dehaze_dcp(img, cfg),
            Restorer::Model(model) => dehaze_mldcp(img, model),
        }
    }

    fn config(&self) -> &DcpConfig {
        match self {
            Restorer::Plain(cfg) => cfg,
            Restorer::Model(model) => &model.dcp,
        }
    }
}

fn cmd_dehaze(args: DehazeArgs, jobs: usize) -> Result<i32> {
    if args.params.is_some() && args.dcp.any_set() {
        bail!("--params embeds its own pipeline configuration; DCP flags conflict with it");
    }
    let restorer = match &args.params {
        Some(path) => {
            let model = TrainedModel::load(path)?;
            if model.direction != Direction::Dehaze {
                bail!(
                    "params file {} has direction \"{}\", expected \"dehaze\"",
                    path.display(),
                    model.direction
                );
            }
            Restorer::Model(Box::new(model))
        }
        None => Restorer::Plain(args.dcp.to_config()?),
    };
    let files = collect_inputs(&args.input)?;
    if files.is_empty() {
        println!("no input images found in {}", args.input.display());
        return Ok(0);
    }
    std::fs::create_dir_all(&args.output)
        .with_context(|| format!("cannot create {}", args.output.display()))?;

    let code = process_batch(&files, jobs, |path| {
        let img = load_image(path)?;
        let out = restorer.dehaze(&img)?;
        let dest = output_path(&args.output, path);
        save_image(&out.image, &dest)?;
        if args.dump_intermediates {
            let stem = dest.file_stem().unwrap().to_string_lossy().into_owned();
            save_field(
                out.transmission.field(),
                &args.output.join(format!("{stem}_transmission.png")),
            )?;
            let dark = dark_channel(&img, restorer.config().patch)?;
            save_field(&dark, &args.output.join(format!("{stem}_dark.png")))?;
        }
        Ok(())
    })?;
    println!("dehazed {} files into {}", files.len(), args.output.display());
    Ok(code)
}

fn cmd_synthesize(args: SynthesizeArgs, jobs: usize) -> Result<i32> {
    if !(0.0..1.0).contains(&args.density) {
        bail!("--density {} outside [0, 1)", args.density);
    }
    let atmosphere = match &args.atmosphere {
        Some(v) => Atmosphere::new([v[0], v[1], v[2]])?,
        None => Atmosphere::new([0.9, 0.9, 0.9])?,
    };
    let spec = match &args.params {
        Some(path) => {
            let model = TrainedModel::load(path)?;
            if model.direction != Direction::Synth {
                bail!(
                    "params file {} has direction \"{}\", expected \"synth\"",
                    path.display(),
                    model.direction
                );
            }
            HazeSpec::from_model(args.density, &model).with_atmosphere(atmosphere)
        }
        None => HazeSpec::physical(args.density).with_atmosphere(atmosphere),
    };
    let files = collect_inputs(&args.input)?;
    if files.is_empty() {
        println!("no input images found in {}", args.input.display());
        return Ok(0);
    }
    std::fs::create_dir_all(&args.output)
        .with_context(|| format!("cannot create {}", args.output.display()))?;

    let dcp_cfg = DcpConfig::default();
    let code = process_batch(&files, jobs, |path| {
        let clean = load_image(path)?;
        let hazy = synthesize(&clean, &spec, &dcp_cfg)?;
        save_image(&hazy, &output_path(&args.output, path))?;
        Ok(())
    })?;
    println!(
        "synthesized {} files at density {} into {}",
        files.len(),
        args.density,
        args.output.display()
    );
    Ok(code)
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    // Validate every numeric flag before touching the filesystem.
    if !(args.lr > 0.0) {
        bail!("--lr {} must be positive", args.lr);
    }
    if args.epochs == 0 {
        bail!("--epochs must be at least 1");
    }
    if args.batch == Some(0) {
        bail!("--batch must be at least 1");
    }
    let dcp_cfg = args.dcp.to_config()?;
    let cfg = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch: args.batch,
        seed: args.seed,
        use_refined_t: dcp_cfg.refine,
        shuffle: !args.no_shuffle,
    };

    let manifest = load_manifest(&args.manifest)?;
    if manifest.is_empty() {
        bail!("manifest {} has no rows", args.manifest.display());
    }
    let direction: Direction = args.direction.into();
    let (params, report) = train(&manifest, direction, &dcp_cfg, &cfg)?;
    for skipped in &report.skipped {
        eprintln!(
            "skipped pair (clean {}): {}",
            skipped.clean_path.display(),
            skipped.message
        );
    }

    let model = TrainedModel::new(direction, params, dcp_cfg);
    model.save(&args.out_params)?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| args.out_params.with_extension("report.jsonl"));
    report.save_jsonl(&report_path)?;

    println!(
        "trained {direction} params over {} epochs; final mean loss {:.6}",
        args.epochs,
        report.final_mean_loss().unwrap_or(f64::NAN)
    );
    println!("params: {}", args.out_params.display());
    println!("report: {}", report_path.display());
    Ok(if report.skipped.is_empty() { 0 } else { 1 })
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    match args.restorer {
        RestorerArg::Mldcp => {
            if args.params.is_none() {
                bail!("--restorer mldcp requires --params");
            }
            if args.dcp.any_set() {
                bail!("--params embeds its own pipeline configuration; DCP flags conflict with it");
            }
        }
        RestorerArg::None | RestorerArg::Dcp => {
            if args.params.is_some() {
                bail!("--params is only meaningful with --restorer mldcp");
            }
        }
    }
    let restorer: Option<Restorer> = match args.restorer {
        RestorerArg::None => None,
        RestorerArg::Dcp => Some(Restorer::Plain(args.dcp.to_config()?)),
        RestorerArg::Mldcp => {
            let path = args.params.as_ref().unwrap();
            let model = TrainedModel::load(path)?;
            if model.direction != Direction::Dehaze {
                bail!(
                    "params file {} has direction \"{}\", expected \"dehaze\"",
                    path.display(),
                    model.direction
                );
            }
            Some(Restorer::Model(Box::new(model)))
        }
    };

    let manifest = load_manifest(&args.manifest)?;
    let table = evaluate_pairs(&manifest, |img| match &restorer {
        None => Ok(img.clone()),
        Some(r) => r.dehaze(img).map(|o| o.image),
    });

    let csv_path = args
        .csv_out
        .clone()
        .unwrap_or_else(|| args.report_out.with_extension("csv"));
    table.write_csv(&csv_path)?;
    table.write_summary_json(&args.report_out)?;

    for failure in &table.failures {
        eprintln!(
            "failed pair {} (clean {}): {}",
            failure.pair_id,
            failure.clean_path.display(),
            failure.message
        );
    }
    let fmt = |v: Option<f64>| match v {
        Some(v) if v.is_finite() => format!("{v:.4}"),
        Some(_) => "inf".to_string(),
        None => "n/a".to_string(),
    };
    println!(
        "evaluated {} pairs: mean PSNR {} dB, mean SSIM {}",
        table.rows.len(),
        fmt(table.mean_psnr()),
        fmt(table.mean_ssim())
    );
    println!("summary: {}", args.report_out.display());
    println!("per-pair: {}", csv_path.display());
    Ok(if table.failures.is_empty() { 0 } else { 1 })
}

fn cmd_fixtures(args: FixturesArgs) -> Result<i32> {
    if args.count == 0 {
        bail!("--count must be at least 1");
    }
    let manifest = make_fixtures(&args.out_dir, args.count, args.seed)?;
    println!(
        "wrote {} clean images and {} pairs under {}",
        args.count,
        manifest.len(),
        args.out_dir.display()
    );
    println!("manifest: {}", args.out_dir.join("manifest.csv").display());
    Ok(0)
}
