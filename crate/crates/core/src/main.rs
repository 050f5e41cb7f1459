use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::json;

use pshape::blocks::ConditionVector;
use pshape::config::{read_json, resolve, RunConfig};
use pshape::data::{load_cloud, make_phantom_dataset, normalize, write_ply, Dataset, PhantomSpec};
use pshape::evaluation::{
    curve_from_checkpoints, evaluate_classifier, evaluate_regressor, metrics_csv, recon_curve_csv,
    reconstruction_curve, regression_targets, synth_curve_csv, synth_then_classify, Splits,
    SynthPoint,
};
use pshape::models::{Model, ModelConfig};
use pshape::training::{
    load_checkpoint, load_checkpoint_expecting, loss_log_csv, save_checkpoint, train, Checkpoint,
    LOSS_LOG_HEADER,
};
use pshape::transport::{solve, GroundNorm, SolverKind, TransportConfig};
use pshape::{Error, PointCloud, Result};

#[derive(Parser)]
#[command(
    name = "pshape",
    version,
    about = "Point-cloud shape analysis with signature networks and optimal transport"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic phantom dataset.
    Phantom(PhantomArgs),
    /// Train a discriminative or generative model.
    Train(TrainArgs),
    /// Decode point clouds from a generative checkpoint.
    Generate(GenerateArgs),
    /// Run an evaluation experiment.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Rotate clouds into the canonical frame learned by a checkpoint.
    Align(AlignArgs),
    /// Print the latent posterior of clouds under a generative checkpoint.
    Encode(EncodeArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct PhantomArgs {
    /// JSON phantom specification; omitted keys take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Directory for the manifest, clouds and references.
    #[arg(long)]
    out: PathBuf,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override one specification value, e.g. `--set points=256`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Discriminative,
    Generative,
}

#[derive(Args)]
struct TrainArgs {
    /// Model family to train.
    #[arg(value_enum)]
    kind: ModelKind,
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory for the checkpoint, loss log and run record.
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint; its architecture must match the
    /// configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct GenerateArgs {
    /// Generative checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory for the generated PLY files.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated condition vector; give it twice for a deformation map.
    #[arg(long, num_args = 1, action = clap::ArgAction::Append)]
    condition: Vec<String>,
    /// Number of latent draws.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Seed of the latent draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Explicit comma-separated latent vector instead of sampling.
    #[arg(long, allow_hyphen_values = true)]
    z: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitChoice {
    Test,
    All,
}

#[derive(Args)]
struct EvalDataArgs {
    /// Discriminative checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for the metrics.
    #[arg(long)]
    out: PathBuf,
    /// Score the held-out test split or every sample.
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    split: SplitChoice,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Precision, recall, F1 and confusion matrix of a classifier.
    Classify(EvalDataArgs),
    /// Mean absolute error of a regressor against the constant-mean baseline.
    Regress(EvalDataArgs),
    /// Reconstruction error against latent size for each scenario.
    ReconCurve(ReconCurveArgs),
    /// Accuracy of classifiers trained only on generated clouds.
    SynthCurve(SynthCurveArgs),
    /// Earth mover's distance between two clouds.
    Emd(EmdArgs),
}

#[derive(Args)]
struct ReconCurveArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for the curve CSV and trained models.
    #[arg(long)]
    out: PathBuf,
    /// Latent sizes per structure: a range `1..5` or a list `1,2,4`.
    #[arg(long)]
    k: Option<String>,
    /// Score checkpoints from an earlier run instead of training.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SynthCurveArgs {
    /// Conditional generative checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest (JSON) providing the real test split.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for the curve CSV.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated synthetic training-set sizes.
    #[arg(long)]
    sizes: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    L1,
    L2,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Auto,
    Exact,
    Approx,
}

#[derive(Args)]
struct EmdArgs {
    /// First cloud (PLY or CSV).
    a: PathBuf,
    /// Second cloud with the same number of points.
    b: PathBuf,
    /// Ground metric between points.
    #[arg(long, value_enum, default_value_t = NormArg::L1)]
    norm: NormArg,
    /// `auto` is exact up to 512 points and approximate above.
    #[arg(long, value_enum, default_value_t = SolverArg::Auto)]
    solver: SolverArg,
    /// Entropic regularization of the approximate solver.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Normalize both clouds before comparing them.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct AlignArgs {
    /// Checkpoint whose branches have rotation blocks.
    #[arg(long)]
    checkpoint: PathBuf,
    /// One cloud per structure, in structure order.
    #[arg(long, required = true, num_args = 1.., action = clap::ArgAction::Append)]
    input: Vec<PathBuf>,
    /// Directory for the aligned clouds.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    /// Generative checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// One cloud per structure, in structure order.
    #[arg(long, required = true, num_args = 1.., action = clap::ArgAction::Append)]
    input: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("PSHAPE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::config(format!(
            "PSHAPE_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(format!("cannot start {n} worker threads: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Eval(EvalCommand::Classify(a)) => cmd_classify(a),
        Command::Eval(EvalCommand::Regress(a)) => cmd_regress(a),
        Command::Eval(EvalCommand::ReconCurve(a)) => cmd_recon_curve(a),
        Command::Eval(EvalCommand::SynthCurve(a)) => cmd_synth_curve(a),
        Command::Eval(EvalCommand::Emd(a)) => cmd_emd(a),
        Command::Align(a) => cmd_align(a),
        Command::Encode(a) => cmd_encode(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Prints the resolved configuration and records it in `run.json`.
fn start_run<T: Serialize>(out: Option<&Path>, command: &str, config: &T) -> Result<()> {
    let resolved = serde_json::to_value(config).expect("configuration serializes");
    println!(
        "resolved configuration:\n{}",
        serde_json::to_string_pretty(&resolved).expect("json")
    );
    if let Some(dir) = out {
        create_dir(dir)?;
        let record = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": resolved,
        });
        let mut text = serde_json::to_string_pretty(&record).expect("json");
        text.push('\n');
        write_file(&dir.join("run.json"), text)?;
    }
    Ok(())
}

fn load_run_config(args: &ConfigArgs) -> Result<RunConfig> {
    RunConfig::load(args.config.as_deref(), &args.set)
}

fn parse_reals(raw: &str, what: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("{what} entry {s:?} is not a number")))
        })
        .collect()
}

fn parse_counts(raw: &str, what: &str) -> Result<Vec<usize>> {
    let bad = || {
        Error::config(format!(
            "{what} {raw:?} is not a list like 1,2,3 or a range like 1..5"
        ))
    };
    if let Some((lo, hi)) = raw.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        if lo == 0 || lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    let v = raw
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    if v.is_empty() || v.contains(&0) {
        return Err(bad());
    }
    Ok(v)
}

fn cmd_phantom(args: PhantomArgs) -> Result<()> {
    let doc = args.spec.as_deref().map(read_json).transpose()?;
    let label = args
        .spec
        .as_ref()
        .map_or("phantom specification".to_string(), |p| {
            p.display().to_string()
        });
    let mut spec: PhantomSpec = resolve(doc, &args.set, &label)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    start_run(Some(&args.out), "phantom", &spec)?;
    let manifest = make_phantom_dataset(&spec, &args.out)?;
    println!(
        "wrote {} samples of {} structure(s) to {}",
        manifest.samples.len(),
        manifest.structures,
        args.out.display()
    );
    Ok(())
}

fn model_config(kind: ModelKind, cfg: &RunConfig, data: &Dataset) -> Result<ModelConfig> {
    Ok(match kind {
        ModelKind::Discriminative => ModelConfig::Discriminative(cfg.discriminative(data)?),
        ModelKind::Generative => ModelConfig::Generative(cfg.generative(data)?),
    })
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = load_run_config(&args.config)?;
    start_run(Some(&args.out), "train", &cfg)?;
    let data = cfg.load_dataset(&args.manifest)?;
    let splits = Splits::new(&data, cfg.train.split, cfg.train.seed)?;
    let config = model_config(args.kind, &cfg, &data)?;
    let (mut model, start_epoch) = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint_expecting(path, &config)?;
            (ckpt.model, ckpt.header.epochs_completed)
        }
        None => {
            let mut model = Model::new(config, cfg.train.seed)?;
            model.set_references(&splits.train.reference_clouds()?)?;
            (model, 0)
        }
    };
    println!(
        "training {} model on {} samples ({} validation), epochs {}..={}",
        model.config().kind(),
        splits.train.len(),
        splits.val.len(),
        start_epoch + 1,
        start_epoch + cfg.train.epochs
    );
    let outcome = train(
        &mut model,
        &splits.train.samples,
        &splits.val.samples,
        &cfg.train,
        start_epoch,
        |r| {
            eprintln!(
                "epoch {:>4}  train {:.6}  val {:.6}",
                r.epoch, r.train.total, r.val_total
            )
        },
    )?;
    save_checkpoint(&model, outcome.last_epoch, &args.out.join("model.psaf"))?;

    let log_path = args.out.join("loss.csv");
    if args.resume.is_some() && log_path.is_file() {
        let csv = loss_log_csv(&outcome.records);
        let rows = csv
            .strip_prefix(LOSS_LOG_HEADER)
            .unwrap_or(&csv)
            .trim_start_matches('\n');
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        f.write_all(rows.as_bytes())
            .map_err(|e| Error::io(&log_path, e))?;
    } else {
        write_file(&log_path, loss_log_csv(&outcome.records))?;
    }
    match outcome.best_epoch {
        Some(e) => println!("best validation loss {} at epoch {e}", outcome.best_val),
        None => println!("no epoch completed with a finite validation loss"),
    }
    if outcome.stopped_early {
        println!("stopped early after epoch {}", outcome.last_epoch);
    }
    if let Some(msg) = outcome.diverged {
        return Err(Error::Numeric(format!(
            "training diverged ({msg}); the last good parameters were saved"
        )));
    }
    Ok(())
}

fn load_generative(path: &Path) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    ckpt.model.as_generative()?;
    Ok(ckpt)
}

fn write_clouds(
    dir: &Path,
    stem: &str,
    clouds: &[PointCloud],
    quality: Option<&[Vec<f64>]>,
) -> Result<()> {
    for (s, cloud) in clouds.iter().enumerate() {
        let q = quality.map(|q| q[s].as_slice());
        write_ply(&dir.join(format!("{stem}_s{s}.ply")), cloud, q)?;
    }
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let ckpt = load_generative(&args.checkpoint)?;
    let g = ckpt.model.as_generative()?;
    let m = g.config.condition_dim;
    let k = g.config.latent_dim;
    let conditions = match args.condition.len() {
        0 if m == 0 => vec![ConditionVector::zeros(0)],
        0 => {
            return Err(Error::config(format!(
                "the model is conditioned on {m} values; pass --condition"
            )))
        }
        1 | 2 => args
            .condition
            .iter()
            .map(|c| ConditionVector::new(parse_reals(c, "condition")?))
            .collect::<Result<Vec<_>>>()?,
        n => {
            return Err(Error::config(format!(
                "at most two conditions allowed, got {n}"
            )))
        }
    };
    let latents: Vec<Vec<f64>> = match &args.z {
        Some(z) => vec![parse_reals(z, "latent")?],
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (0..args.count)
                .map(|_| (0..k).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect()
        }
    };
    let resolved = json!({
        "checkpoint": args.checkpoint,
        "conditions": conditions.iter().map(|c| c.values().to_vec()).collect::<Vec<_>>(),
        "latents": latents,
        "seed": args.seed,
        "model": ckpt.header.model,
    });
    start_run(Some(&args.out), "generate", &resolved)?;
    for (i, z) in latents.iter().enumerate() {
        if conditions.len() == 1 {
            write_clouds(
                &args.out,
                &format!("sample_{i:04}"),
                &g.generate(z, &conditions[0])?,
                None,
            )?;
        } else {
            let a = g.generate(z, &conditions[0])?;
            let b = g.generate(z, &conditions[1])?;
            let map = g.deformation_map(z, &conditions[0], &conditions[1])?;
            write_clouds(&args.out, &format!("sample_{i:04}_a"), &a, None)?;
            write_clouds(&args.out, &format!("sample_{i:04}_b"), &b, None)?;
            write_clouds(&args.out, &format!("deformation_{i:04}"), &a, Some(&map))?;
        }
    }
    println!(
        "wrote {} latent sample(s) under {} condition(s) to {}",
        latents.len(),
        conditions.len(),
        args.out.display()
    );
    Ok(())
}

fn eval_samples(args: &EvalDataArgs, cfg: &RunConfig) -> Result<(Splits, Dataset)> {
    let data = cfg.load_dataset(&args.manifest)?;
    let splits = Splits::new(&data, cfg.train.split, cfg.train.seed)?;
    let scored = match args.split {
        SplitChoice::Test => splits.test.clone(),
        SplitChoice::All => data,
    };
    if scored.is_empty() {
        return Err(Error::data("the evaluation split is empty"));
    }
    Ok((splits, scored))
}

fn cmd_classify(args: EvalDataArgs) -> Result<()> {
    let cfg = load_run_config(&args.config)?;
    start_run(Some(&args.out), "eval classify", &cfg)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let model = ckpt.model.as_discriminative()?;
    let (_, scored) = eval_samples(&args, &cfg)?;
    let report = evaluate_classifier(model, &scored.samples)?;
    println!(
        "accuracy {}  precision {}  recall {}  f1 {}",
        report.accuracy, report.precision, report.recall, report.f1
    );
    for (l, row) in report.confusion.iter().enumerate() {
        println!("label {l}: {row:?}");
    }
    write_file(&args.out.join("metrics.csv"), metrics_csv(&report.rows()))
}

fn cmd_regress(args: EvalDataArgs) -> Result<()> {
    let cfg = load_run_config(&args.config)?;
    start_run(Some(&args.out), "eval regress", &cfg)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let model = ckpt.model.as_discriminative()?;
    let (splits, scored) = eval_samples(&args, &cfg)?;
    let train_targets = regression_targets(&splits.train.samples)?;
    if train_targets.is_empty() {
        return Err(Error::data(
            "training split is empty; no baseline available",
        ));
    }
    let baseline = train_targets.iter().sum::<f64>() / train_targets.len() as f64;
    let report = evaluate_regressor(model, &scored.samples, baseline)?;
    println!(
        "mae {}  constant-mean baseline {}",
        report.mae, report.baseline_mae
    );
    let rows = vec![
        ("mae".to_string(), report.mae),
        ("baseline_mae".to_string(), report.baseline_mae),
        ("baseline_value".to_string(), baseline),
    ];
    write_file(&args.out.join("metrics.csv"), metrics_csv(&rows))
}

fn cmd_recon_curve(args: ReconCurveArgs) -> Result<()> {
    let mut cfg = load_run_config(&args.config)?;
    if let Some(k) = &args.k {
        cfg.curve.ks = parse_counts(k, "--k")?;
    }
    start_run(Some(&args.out), "eval recon-curve", &cfg)?;
    let data = cfg.load_dataset(&args.manifest)?;
    let splits = Splits::new(&data, cfg.train.split, cfg.train.seed)?;
    let points = match &args.checkpoints {
        Some(dir) => {
            curve_from_checkpoints(dir, &cfg.curve.ks, &cfg.curve.scenarios, &splits.test)?
        }
        None => {
            let models = args.out.join("models");
            create_dir(&models)?;
            let setup = cfg.curve_setup(&data)?;
            reconstruction_curve(&splits, &setup, Some(&models), |p| {
                eprintln!(
                    "{} k={} mean_emd {}",
                    p.scenario, p.k_per_structure, p.mean_emd
                )
            })?
        }
    };
    let csv = recon_curve_csv(&points);
    print!("{csv}");
    write_file(&args.out.join("recon_curve.csv"), csv)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn cmd_synth_curve(args: SynthCurveArgs) -> Result<()> {
    let mut cfg = load_run_config(&args.config)?;
    if let Some(s) = &args.sizes {
        cfg.synth.sizes = parse_counts(s, "--sizes")?;
    }
    start_run(Some(&args.out), "eval synth-curve", &cfg)?;
    let ckpt = load_generative(&args.checkpoint)?;
    let g = ckpt.model.as_generative()?;
    let data = cfg.load_dataset(&args.manifest)?;
    let splits = Splits::new(&data, cfg.train.split, cfg.train.seed)?;
    let setup = cfg.synth_setup(&data)?;
    let mut runs: Vec<Vec<SynthPoint>> = Vec::new();
    for r in 0..cfg.synth.repeats {
        let seed = cfg.train.seed.wrapping_add(1000 * r as u64);
        runs.push(synth_then_classify(
            g,
            &setup,
            &splits.test.samples,
            seed,
            |p| eprintln!("repeat {r} size {} accuracy {}", p.size, p.accuracy),
        )?);
    }
    let points: Vec<SynthPoint> = (0..setup.sizes.len())
        .map(|i| SynthPoint {
            size: setup.sizes[i],
            accuracy: median(runs.iter().map(|run| run[i].accuracy).collect()),
        })
        .collect();
    let csv = synth_curve_csv(&points);
    print!("{csv}");
    write_file(&args.out.join("synth_curve.csv"), csv)
}

fn cmd_emd(args: EmdArgs) -> Result<()> {
    let config = TransportConfig {
        norm: match args.norm {
            NormArg::L1 => GroundNorm::L1,
            NormArg::L2 => GroundNorm::L2,
        },
        solver: match args.solver {
            SolverArg::Auto => SolverKind::Auto,
            SolverArg::Exact => SolverKind::Exact,
            SolverArg::Approx => SolverKind::Approx,
        },
        epsilon: args.epsilon,
        ..TransportConfig::default()
    };
    start_run(
        None,
        "eval emd",
        &json!({"transport": config, "normalize": args.normalize}),
    )?;
    let mut a = load_cloud(&args.a)?;
    let mut b = load_cloud(&args.b)?;
    if args.normalize {
        a = normalize(&a)?;
        b = normalize(&b)?;
    }
    if a.len() != b.len() {
        return Err(Error::UnequalCardinality(a.len(), b.len()));
    }
    let plan = solve(&a, &b, &config)?;
    println!("solver {}", plan.solver_name());
    println!("cost {}", plan.cost());
    println!("mean_per_point {}", plan.cost() / a.len() as f64);
    Ok(())
}

fn load_inputs(paths: &[PathBuf]) -> Result<Vec<PointCloud>> {
    paths.iter().map(|p| normalize(&load_cloud(p)?)).collect()
}

fn cmd_align(args: AlignArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let resolved =
        json!({"checkpoint": args.checkpoint, "inputs": args.input, "model": ckpt.header.model});
    start_run(args.out.as_deref(), "align", &resolved)?;
    let clouds = load_inputs(&args.input)?;
    let branches = ckpt.model.branches();
    if clouds.len() != branches.len() {
        return Err(Error::config(format!(
            "model has {} structure(s) but {} input(s) were given",
            branches.len(),
            clouds.len()
        )));
    }
    for (s, (branch, cloud)) in branches.iter().zip(&clouds).enumerate() {
        let rot = branch.rotation().ok_or_else(|| {
            Error::config(format!("structure {s} of the model has no rotation block"))
        })?;
        let (theta, aligned) = rot.align(ckpt.model.params(), cloud)?;
        let deg = theta.0.map(f64::to_degrees);
        println!("structure {s}: theta_rad {:?} theta_deg {:?}", theta.0, deg);
        if let Some(dir) = &args.out {
            write_ply(&dir.join(format!("aligned_s{s}.ply")), &aligned, None)?;
        }
    }
    Ok(())
}

fn cmd_encode(args: EncodeArgs) -> Result<()> {
    let ckpt = load_generative(&args.checkpoint)?;
    let g = ckpt.model.as_generative()?;
    let resolved =
        json!({"checkpoint": args.checkpoint, "inputs": args.input, "model": ckpt.header.model});
    start_run(None, "encode", &resolved)?;
    let posterior = g.encode(&load_inputs(&args.input)?)?;
    println!(
        "{}",
        json!({"mu": posterior.mu, "log_var": posterior.log_var})
    );
    Ok(())
}
