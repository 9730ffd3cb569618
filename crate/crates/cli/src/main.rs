use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ladderseg::config::{RunConfig, Split};
use ladderseg::dataset_io::{generate_synthetic, load_dataset, read_labels, write_labels};
use ladderseg::evaluation::{evaluate, predict_image, EvalOptions};
use ladderseg::labelspace::Group;
use ladderseg::metrics::{foreign_incidence, IncidenceReport};
use ladderseg::trainer::{train, DomainData, EvalData, TrainJob};
use ladderseg::{Checkpoint, Error, Model};

/// Desk-scale cross-dataset semantic segmentation.
#[derive(Parser, Debug)]
#[command(name = "ladderseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any config value, e.g. `--set train.iterations=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (`output.dir`).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic datasets listed under `[[generate]]`.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train on the `train` datasets, evaluating on the `val` ones.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of iterations (`train.iterations`).
        #[arg(long)]
        iterations: Option<usize>,
        /// Seed (`train.seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Pyramid loss weight (`train.pyramid_weight`).
        #[arg(long)]
        pyramid_weight: Option<f64>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write per-dataset reports.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root; defaults to the `val` datasets of the config.
        #[arg(long, requires = "dataset")]
        root: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Predict a dataset and write label images for a benchmark.
    Export {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        dataset: String,
        /// Benchmark whose native ids are written.
        #[arg(long, required_unless_present = "unified")]
        dest: Option<String>,
        /// Foreign-class strategy (`eval.strategy`).
        #[arg(long)]
        strategy: Option<String>,
        /// Write unified ids instead of native ones.
        #[arg(long, conflicts_with = "dest")]
        unified: bool,
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Report how many predicted pixels fall into each class group.
    Analyze {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory with one subdirectory of unified-id predictions per dataset.
        #[arg(long)]
        predictions: PathBuf,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Foreign-class strategy (`eval.strategy`).
    #[arg(long)]
    strategy: Option<String>,
    /// Resize factor for evaluation (`eval.eval_scale`).
    #[arg(long)]
    eval_scale: Option<f64>,
    /// Score negative images like regular ones (`eval.negative_rule=false`).
    #[arg(long)]
    no_negative_rule: bool,
}

fn load_config(args: &ConfigArgs, mut extra: Vec<String>) -> Result<RunConfig> {
    let mut overrides = args.overrides.clone();
    overrides.append(&mut extra);
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path, &overrides)
            .with_context(|| format!("reading {}", path.display()))?,
        None => RunConfig::parse("", &overrides)?,
    };
    config.apply_env();
    if let Some(dir) = &args.output {
        config.output.dir = dir.clone();
    }
    Ok(config)
}

fn quoted(s: &str) -> String {
    format!("{s:?}")
}

fn cmd_generate(args: &ConfigArgs) -> Result<()> {
    let config = load_config(args, vec![])?;
    let space = config.label_space()?;
    if config.generate.is_empty() {
        return Err(Error::Config {
            field: "generate".into(),
            message: "no [[generate]] entries".into(),
        }
        .into());
    }
    let specs = config
        .generate
        .iter()
        .map(|g| g.spec(&space))
        .collect::<ladderseg::Result<Vec<_>>>()?;
    for (entry, spec) in config.generate.iter().zip(&specs) {
        let ds = generate_synthetic(&entry.root, spec, &space, entry.seed)
            .with_context(|| format!("generating {} in {}", spec.dataset_id, entry.root.display()))?;
        println!("{}: {} images in {}", spec.dataset_id, ds.len(), entry.root.join(&spec.dataset_id).display());
    }
    Ok(())
}

fn cmd_train(
    args: &ConfigArgs,
    iterations: Option<usize>,
    seed: Option<u64>,
    pyramid_weight: Option<f64>,
    resume: Option<&Path>,
) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(v) = iterations {
        extra.push(format!("train.iterations={v}"));
    }
    if let Some(v) = seed {
        extra.push(format!("train.seed={v}"));
    }
    if let Some(v) = pyramid_weight {
        extra.push(format!("train.pyramid_weight={v:?}"));
    }
    let config = load_config(args, extra)?;
    let space = config.label_space()?;
    config.validate(&space)?;
    config.check_paths()?;

    let mut train_data = Vec::new();
    for d in config.datasets_in(Split::Train) {
        let ds = load_dataset(&d.root, &d.id, &space)?;
        train_data.push(DomainData {
            id: d.id.clone(),
            group: ds.group,
            samples: ds.load_all(&space)?,
        });
    }
    if train_data.is_empty() {
        return Err(Error::Config {
            field: "datasets".into(),
            message: "no dataset with split = \"train\"".into(),
        }
        .into());
    }
    let mut val_data = Vec::new();
    for d in config.datasets_in(Split::Val) {
        let ds = load_dataset(&d.root, &d.id, &space)?;
        val_data.push(EvalData {
            id: d.id.clone(),
            samples: ds.load_all_for_eval(&space)?,
        });
    }

    let out = config.output.dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), config.to_toml())?;
    let checkpoint = resume.map(Checkpoint::load).transpose()?;
    let job = TrainJob {
        space: &space,
        train: &train_data,
        val: &val_data,
        config: config.train.clone(),
        augment: config.augment.clone(),
        ratio: config.sampler.ratio,
        eval: config.eval.options(&space)?,
        output_dir: Some(out.clone()),
        config_echo: config.echo(),
    };
    let model = Model::new(config.model.clone())?;
    let outcome = train(model, checkpoint.as_ref(), &job)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "iteration {}: main {:.4} pyramid {:.4} total {:.4}",
            last.iteration, last.main, last.pyramid, last.total
        );
    }
    for e in outcome.evals.iter().rev().take(val_data.len()) {
        println!(
            "{} @ {}: pixel accuracy {:.4}, mIoU {}",
            e.report.dataset,
            e.iteration,
            e.report.pixel_accuracy,
            e.report.class_iou.mean.map_or("-".into(), |m| format!("{m:.4}"))
        );
    }
    println!("checkpoints and logs in {}", out.display());
    Ok(())
}

fn eval_overrides(eval: &EvalArgs) -> Vec<String> {
    let mut extra = Vec::new();
    if let Some(s) = &eval.strategy {
        extra.push(format!("eval.strategy={}", quoted(s)));
    }
    if let Some(s) = eval.eval_scale {
        extra.push(format!("eval.eval_scale={s:?}"));
    }
    if eval.no_negative_rule {
        extra.push("eval.negative_rule=false".into());
    }
    extra
}

fn cmd_eval(
    args: &ConfigArgs,
    eval: &EvalArgs,
    checkpoint: &Path,
    root: Option<&Path>,
    dataset: Option<&str>,
) -> Result<()> {
    let config = load_config(args, eval_overrides(eval))?;
    let space = config.label_space()?;
    let options: EvalOptions = config.eval.options(&space)?;
    let model = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?
        .restore_model()?;
    let targets: Vec<(PathBuf, String)> = match (root, dataset) {
        (Some(r), Some(d)) => vec![(r.to_path_buf(), d.to_string())],
        (None, Some(d)) => config
            .datasets_in(Split::Val)
            .filter(|e| e.id == d)
            .map(|e| (e.root.clone(), e.id.clone()))
            .collect(),
        _ => config
            .datasets_in(Split::Val)
            .map(|e| (e.root.clone(), e.id.clone()))
            .collect(),
    };
    if targets.is_empty() {
        return Err(Error::Config {
            field: "datasets".into(),
            message: "nothing to evaluate; pass --root and --dataset or list val datasets".into(),
        }
        .into());
    }
    let out = config.output.dir.join("eval");
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for (root, id) in targets {
        let ds = load_dataset(&root, &id, &space)?;
        let samples = ds.load_all_for_eval(&space)?;
        let report = evaluate(&model, &id, &samples, &space, &options)?;
        fs::write(out.join(format!("{id}.tsv")), report.to_tsv(&space))?;
        fs::write(out.join(format!("{id}.json")), report.to_json())?;
        print!("{}", report.to_tsv(&space));
        println!(
            "{id}: {} images, pixel accuracy {:.4}",
            report.images, report.pixel_accuracy
        );
        if let Some(neg) = report.negative {
            println!("{id}: negative images {}, pixel errors {} of {}", report.negative_images, neg.errors, neg.pixels);
        }
    }
    println!("reports in {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_export(
    args: &ConfigArgs,
    checkpoint: &Path,
    root: &Path,
    dataset: &str,
    dest: Option<&str>,
    strategy: Option<&str>,
    unified: bool,
    out: &Path,
) -> Result<()> {
    let extra = strategy.map(|s| vec![format!("eval.strategy={}", quoted(s))]).unwrap_or_default();
    let config = load_config(args, extra)?;
    let space = config.label_space()?;
    let options = config.eval.options(&space)?;
    if let Some(d) = dest {
        space.dataset(d)?;
    }
    let model = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?
        .restore_model()?;
    let ds = load_dataset(root, dataset, &space)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for d in &ds.samples {
        let image = ladderseg::dataset_io::read_image(&d.image_path)?;
        let pred = predict_image(&model, &image, options.eval_scale)?;
        let written = match dest {
            Some(dest) if !unified => space.remap_for_benchmark(&pred, dest, &options.strategy)?,
            _ => pred,
        };
        write_labels(&out.join(format!("{}.png", d.name)), &written)?;
    }
    println!("{} label images in {}", ds.len(), out.display());
    Ok(())
}

fn cmd_analyze(args: &ConfigArgs, predictions: &Path, out: Option<&Path>) -> Result<()> {
    let config = load_config(args, vec![])?;
    let space = config.label_space()?;
    let mut dirs: Vec<PathBuf> = fs::read_dir(predictions)
        .with_context(|| format!("reading {}", predictions.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut report = IncidenceReport::default();
    for dir in dirs {
        let id = dir.file_name().expect("directory name").to_string_lossy().into_owned();
        let home: Group = space.dataset(&id)?.group();
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        files.sort();
        let maps = files.iter().map(|p| read_labels(p)).collect::<ladderseg::Result<Vec<_>>>()?;
        report.rows.push(foreign_incidence(&id, &maps, home, &space));
    }
    if report.rows.is_empty() {
        bail!("no dataset subdirectories in {}", predictions.display());
    }
    let table = report.to_tsv();
    print!("{table}");
    if let Some(path) = out {
        fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config } => cmd_generate(&config),
        Command::Train {
            config,
            iterations,
            seed,
            pyramid_weight,
            resume,
        } => cmd_train(&config, iterations, seed, pyramid_weight, resume.as_deref()),
        Command::Eval {
            config,
            eval,
            checkpoint,
            root,
            dataset,
        } => cmd_eval(&config, &eval, &checkpoint, root.as_deref(), dataset.as_deref()),
        Command::Export {
            config,
            checkpoint,
            root,
            dataset,
            dest,
            strategy,
            unified,
            out,
        } => cmd_export(
            &config,
            &checkpoint,
            &root,
            &dataset,
            dest.as_deref(),
            strategy.as_deref(),
            unified,
            &out,
        ),
        Command::Analyze {
            config,
            predictions,
            out,
        } => cmd_analyze(&config, &predictions, out.as_deref()),
    }
}

/// 1 for invalid input or configuration, 2 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::Config { .. }
            | Error::UnknownDataset(_)
            | Error::UnknownClass(_)
            | Error::MissingTarget
            | Error::InvalidTarget { .. }
            | Error::LabelTable { .. },
        ) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
