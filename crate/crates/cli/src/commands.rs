//! One function per subcommand. Every command resolves its knobs through the
//! same layering (built-in defaults, then `--config` file, then flags),
//! records the resolved values and all file hashes in a manifest, and writes
//! only derived files — so re-running any command with the same inputs and
//! seed reproduces its outputs byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use helioadapt::adapt::{adapt_target, AdaptConfig};
use helioadapt::data::{
    annotate_fraction, assign_splits, bundled_profile, gen_synthetic, AnnotateStrategy, Split,
    SplitFractions, SplitOrder,
};
use helioadapt::train::evaluate;
use sha2::{Digest, Sha256};

use crate::artifact::{ModelArtifact, ProvenanceDoc};
use crate::config::FileConfig;
use crate::errors::CliError;
use crate::experiment::{assert_complete, run_grid, write_outcome, GridSpec};
use crate::manifest::Manifest;
use crate::pipeline::{
    load_location, prepare_target, read_prepared, select_source_features, train_source_model, Meta,
    SelectionBundle, SourceOptions, PREPARED_FILE,
};
use crate::report;

const MANIFEST_FILE: &str = "manifest.txt";
const MODEL_FILE: &str = "model.json";
const SELECTION_FILE: &str = "selection.json";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synth

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Bundled climate profile to generate.
    #[arg(long)]
    pub profile: String,
    /// Output directory for weather.csv, power.csv, and meta.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Half-hour weather rows to generate (a full year by default); power
    /// is emitted at 5-minute cadence, six rows per weather row.
    #[arg(long, default_value_t = 17_520)]
    pub rows: usize,
}

pub fn run_synth(args: &SynthArgs) -> Result<()> {
    let profile = bundled_profile(&args.profile)?;
    ensure_dir(&args.out)?;
    let data = gen_synthetic(&profile, args.rows, args.seed)?;

    let weather_path = args.out.join(crate::pipeline::WEATHER_FILE);
    let power_path = args.out.join(crate::pipeline::POWER_FILE);
    data.weather.save_csv(&weather_path)?;
    data.power.save_csv(&power_path)?;
    let meta_path = Meta {
        profile: profile.name.clone(),
        capacity_kw: profile.capacity_kw,
    }
    .write(&args.out)?;

    let mut manifest = Manifest::new("synth");
    manifest.config("profile", &args.profile);
    manifest.config("rows", args.rows);
    manifest.config("seed", args.seed);
    manifest.output("weather", &weather_path)?;
    manifest.output("power", &power_path)?;
    manifest.output("meta", &meta_path)?;
    manifest.write(&args.out.join(MANIFEST_FILE))?;

    println!(
        "generated {}: {} weather rows, {} power rows in {}",
        profile.name,
        data.weather.len(),
        data.power.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// prep

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// Location directory produced by `synth` (weather.csv + power.csv +
    /// meta.txt).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for prepared.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for the shuffled 70/15/15 split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run_prep(args: &PrepArgs) -> Result<()> {
    let mut manifest = Manifest::new("prep");
    manifest.config("seed", args.seed);
    let mut ds = load_location(&args.data, &mut manifest)?;
    assign_splits(
        &mut ds,
        SplitFractions::default(),
        SplitOrder::Shuffled,
        args.seed,
    )?;

    ensure_dir(&args.out)?;
    let meta_path = Meta::read(&args.data)?.write(&args.out)?;
    let prepared_path = args.out.join(PREPARED_FILE);
    crate::pipeline::write_prepared(&ds, &prepared_path)?;

    let (tr, va, te) = ds.split_counts();
    manifest.note("rows", ds.n());
    manifest.note("split.train", tr);
    manifest.note("split.val", va);
    manifest.note("split.test", te);
    manifest.output("prepared", &prepared_path)?;
    manifest.output("meta", &meta_path)?;
    manifest.write(&args.out.join(MANIFEST_FILE))?;

    println!(
        "prepared {} rows (train/val/test = {tr}/{va}/{te}) at {}",
        ds.n(),
        prepared_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// shared knob groups

/// Binning and forest-selection knobs.
#[derive(Debug, Clone, Args)]
pub struct ForestFlags {
    /// Number of power classes.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Features kept after importance ranking.
    #[arg(long)]
    pub k: Option<usize>,
    /// Trees in the selection forest.
    #[arg(long)]
    pub trees: Option<usize>,
    /// Depth cap per tree.
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Minimum samples a node needs to keep splitting.
    #[arg(long)]
    pub min_samples_split: Option<usize>,
}

/// Source-training knobs.
#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without a validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
}

fn apply_forest_flags(
    opts: &mut SourceOptions,
    flags: &ForestFlags,
    file: &FileConfig,
) -> Result<()> {
    opts.classes = file.resolve(flags.classes, "classes", opts.classes)?;
    opts.k_features = file.resolve(flags.k, "k_features", opts.k_features)?;
    opts.trees = file.resolve(flags.trees, "trees", opts.trees)?;
    opts.max_depth = file.resolve(flags.max_depth, "max_depth", opts.max_depth)?;
    opts.min_samples_split = file.resolve(
        flags.min_samples_split,
        "min_samples_split",
        opts.min_samples_split,
    )?;
    Ok(())
}

fn apply_train_flags(
    opts: &mut SourceOptions,
    flags: &TrainFlags,
    file: &FileConfig,
) -> Result<()> {
    opts.train.lr = file.resolve(flags.lr, "lr", opts.train.lr)?;
    opts.train.batch_size = file.resolve(flags.batch_size, "batch_size", opts.train.batch_size)?;
    opts.train.max_epochs = file.resolve(flags.max_epochs, "max_epochs", opts.train.max_epochs)?;
    opts.train.patience = file.resolve(flags.patience, "train_patience", opts.train.patience)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn resolve_adapt(
    file: &FileConfig,
    alpha: Option<f64>,
    lambda: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    temperature: Option<f64>,
    labeled_fraction: Option<f64>,
    early_stop: bool,
    patience: Option<usize>,
) -> Result<AdaptConfig> {
    let d = AdaptConfig::default();
    Ok(AdaptConfig {
        alpha: file.resolve(alpha, "alpha", d.alpha)?,
        lambda: file.resolve(lambda, "lambda", d.lambda)?,
        p: d.p,
        epochs: file.resolve(epochs, "epochs", d.epochs)?,
        batch_size: file.resolve(batch_size, "batch_size", d.batch_size)?,
        labeled_fraction_per_batch: file
            .resolve_opt(labeled_fraction, "labeled_fraction_per_batch")?,
        temperature: file.resolve(temperature, "temperature", d.temperature)?,
        lr: file.resolve(lr, "lr", d.lr)?,
        early_stop: file.resolve(
            if early_stop { Some(true) } else { None },
            "early_stop",
            d.early_stop,
        )?,
        patience: file.resolve(patience, "patience", d.patience)?,
        seed: d.seed,
    })
}

fn record_adapt_config(manifest: &mut Manifest, cfg: &AdaptConfig) {
    manifest.config("alpha", cfg.alpha);
    manifest.config("lambda", cfg.lambda);
    manifest.config("p", cfg.p);
    manifest.config("epochs", cfg.epochs);
    manifest.config("batch_size", cfg.batch_size);
    manifest.config(
        "labeled_fraction_per_batch",
        cfg.labeled_fraction_per_batch
            .map_or_else(|| "natural".into(), |r| r.to_string()),
    );
    manifest.config("temperature", cfg.temperature);
    manifest.config("lr", cfg.lr);
    manifest.config("early_stop", cfg.early_stop);
    manifest.config("patience", cfg.patience);
    manifest.config("seed", cfg.seed);
}

fn record_source_options(manifest: &mut Manifest, opts: &SourceOptions) {
    manifest.config("classes", opts.classes);
    manifest.config("k_features", opts.k_features);
    manifest.config("trees", opts.trees);
    manifest.config("max_depth", opts.max_depth);
    manifest.config("min_samples_split", opts.min_samples_split);
    manifest.config("lr", opts.train.lr);
    manifest.config("batch_size", opts.train.batch_size);
    manifest.config("max_epochs", opts.train.max_epochs);
    manifest.config("train_patience", opts.train.patience);
    manifest.config("seed", opts.train.seed);
}

// ---------------------------------------------------------------------------
// select-features

#[derive(Debug, Args)]
pub struct SelectFeaturesArgs {
    /// Prepared-location directory (from `prep`).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for selection.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub forest: ForestFlags,
    /// Key-value config file layered under the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run_select_features(args: &SelectFeaturesArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let seed = file.resolve(args.seed, "seed", 0)?;
    let mut opts = SourceOptions::with_seed(seed);
    apply_forest_flags(&mut opts, &args.forest, &file)?;

    let mut manifest = Manifest::new("select-features");
    record_source_options(&mut manifest, &opts);
    let mut ds = read_prepared(&args.data, &mut manifest)?;
    let selection = select_source_features(&mut ds, &opts)?;

    ensure_dir(&args.out)?;
    let path = args.out.join(SELECTION_FILE);
    selection.save(&path)?;
    manifest.output("selection", &path)?;
    manifest.note("forest_test_accuracy", selection.forest_test_accuracy);
    manifest.write(&args.out.join(MANIFEST_FILE))?;

    println!(
        "selected {} of {} features: {} (forest test accuracy {:.4})",
        selection.indices.len(),
        selection.importances.len(),
        selection.names.join(", "),
        selection.forest_test_accuracy
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-source

#[derive(Debug, Args)]
pub struct TrainSourceArgs {
    /// Prepared-location directory (from `prep`).
    #[arg(long)]
    pub data: PathBuf,
    /// selection.json from `select-features`.
    #[arg(long)]
    pub selection: PathBuf,
    /// Output directory for model.json and history.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Key-value config file layered under the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run_train_source(args: &TrainSourceArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let seed = file.resolve(args.seed, "seed", 0)?;
    let mut opts = SourceOptions::with_seed(seed);
    apply_train_flags(&mut opts, &args.train, &file)?;

    let mut manifest = Manifest::new("train-source");
    record_source_options(&mut manifest, &opts);
    let mut ds = read_prepared(&args.data, &mut manifest)?;
    let selection = SelectionBundle::load(&args.selection)?;
    manifest.input("selection", &args.selection)?;

    let bundle = train_source_model(&mut ds, &selection, &opts)?;

    ensure_dir(&args.out)?;
    let model_path = args.out.join(MODEL_FILE);
    bundle.artifact.save(&model_path)?;
    let mut history = String::from("epoch,train_loss,val_accuracy\n");
    for e in &bundle.history.epochs {
        history.push_str(&format!(
            "{},{},{}\n",
            e.epoch, e.train_loss, e.val_accuracy
        ));
    }
    let history_path = args.out.join("history.csv");
    write_text(&history_path, &history)?;

    manifest.output("model", &model_path)?;
    manifest.output("history", &history_path)?;
    manifest.note("best_epoch", bundle.history.best_epoch);
    manifest.note("best_val_accuracy", bundle.history.best_val_accuracy);
    manifest.note("test_accuracy", bundle.network_test.accuracy);
    manifest.write(&args.out.join(MANIFEST_FILE))?;

    println!(
        "trained on {} for {} epochs: best val accuracy {:.4} (epoch {}), test accuracy {:.4}",
        ds.origin,
        bundle.history.epochs.len(),
        bundle.history.best_val_accuracy,
        bundle.history.best_epoch,
        bundle.network_test.accuracy
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// adapt

#[derive(Debug, Args)]
pub struct AdaptArgs {
    /// Trained model file (model.json). Together with the target data below
    /// this is the complete input: adaptation never reads source samples.
    #[arg(long)]
    pub model: PathBuf,
    /// Prepared target-location directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the adapted model and logs.
    #[arg(long)]
    pub out: PathBuf,
    /// Share of target training labels available, in percent.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Teacher EMA decay.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the supervised loss term.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Adaptation epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Teacher softmax temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Fixed share of labeled rows per batch (default: natural mixing).
    #[arg(long)]
    pub labeled_fraction: Option<f64>,
    /// Stop on stagnant labeled-validation accuracy (needs p >= 10).
    #[arg(long)]
    pub early_stop: bool,
    /// Epochs tolerated without improvement when early stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Key-value config file layered under the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub source_csv: Option<PathBuf>,
}

pub fn run_adapt(args: &AdaptArgs) -> Result<()> {
    // Rejected before any file is opened: the adaptation contract is that
    // source samples are never an input, only the trained model is.
    if let Some(path) = &args.source_csv {
        return Err(CliError::Contract(format!(
            "adaptation is source-free and accepts no source samples; \
             refusing --source-csv {} (nothing was read)",
            path.display()
        ))
        .into());
    }

    let file = FileConfig::load(args.config.as_deref())?;
    let p = file.resolve(args.p, "p", 20.0)?;
    let seed = file.resolve(args.seed, "seed", 0)?;
    let mut cfg = resolve_adapt(
        &file,
        args.alpha,
        args.lambda,
        args.epochs,
        args.batch_size,
        args.lr,
        args.temperature,
        args.labeled_fraction,
        args.early_stop,
        args.patience,
    )?;
    cfg.p = p;
    cfg.seed = seed;

    let mut manifest = Manifest::new("adapt");
    record_adapt_config(&mut manifest, &cfg);

    let artifact = ModelArtifact::load(&args.model)?;
    manifest.input("model", &args.model)?;
    let mut ds = read_prepared(&args.data, &mut manifest)?;
    prepare_target(&mut ds, &artifact)?;
    let n_labeled = annotate_fraction(&mut ds, p, AnnotateStrategy::Uniform, seed)?;

    let net = artifact.to_network()?;
    let (teacher, adapt_report) = adapt_target(&net, &ds, &cfg)?;

    ensure_dir(&args.out)?;
    let adapted = ModelArtifact::from_parts(
        &teacher,
        &artifact.normalizer(),
        &artifact.bin_edges()?,
        artifact.selected_features.clone(),
        ProvenanceDoc {
            seed,
            config_hash: format!("{:x}", Sha256::digest(format!("{cfg:?}").as_bytes())),
            source_profile: artifact.provenance.source_profile.clone(),
        },
    );
    let adapted_path = args.out.join("adapted-model.json");
    adapted.save(&adapted_path)?;

    let mut epochs = String::from("epoch,l_cons,l_ce,l_total,n_labeled,n_total,val_accuracy\n");
    for e in &adapt_report.epochs {
        epochs.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.epoch,
            e.loss.l_cons,
            e.loss.l_ce,
            e.loss.l_total,
            e.loss.n_labeled,
            e.loss.n_total,
            e.val_accuracy.map_or_else(String::new, |v| v.to_string()),
        ));
    }
    let epochs_path = args.out.join("epochs.csv");
    write_text(&epochs_path, &epochs)?;

    let (tr, _, _) = ds.split_counts();
    let report_text = format!(
        "source profile = {}\n\
         target origin = {}\n\
         annotation share = {}% ({n_labeled} of {tr} training rows labeled)\n\
         baseline accuracy = {}\n\
         adapted accuracy = {}\n\
         delta = {}\n\
         student accuracy = {}\n\
         epochs run = {}\n\
         best epoch = {}\n",
        artifact.provenance.source_profile,
        ds.origin,
        crate::experiment::format_p(p),
        adapt_report.baseline.accuracy,
        adapt_report.adapted.accuracy,
        adapt_report.delta,
        adapt_report.student_accuracy,
        adapt_report.epochs.len(),
        adapt_report
            .best_epoch
            .map_or_else(|| "-".into(), |e| e.to_string()),
    );
    let report_path = args.out.join("adapt-report.txt");
    write_text(&report_path, &report_text)?;

    manifest.output("adapted_model", &adapted_path)?;
    manifest.output("epochs", &epochs_path)?;
    manifest.output("report", &report_path)?;
    manifest.note("baseline_accuracy", adapt_report.baseline.accuracy);
    manifest.note("adapted_accuracy", adapt_report.adapted.accuracy);
    manifest.note("delta", adapt_report.delta);
    manifest.write(&args.out.join(MANIFEST_FILE))?;

    println!(
        "adapted {} -> {}: accuracy {:.4} -> {:.4} (delta {:+.4}) over {} epochs",
        artifact.provenance.source_profile,
        ds.origin,
        adapt_report.baseline.accuracy,
        adapt_report.adapted.accuracy,
        adapt_report.delta,
        adapt_report.epochs.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl SplitArg {
    fn to_split(self) -> Split {
        match self {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }

    fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
            SplitArg::Test => "test",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file to score (model.json or adapted-model.json).
    #[arg(long)]
    pub model: PathBuf,
    /// Prepared-location directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Which split to score.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Optional output directory for eval.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_eval(args: &EvalArgs) -> Result<()> {
    let mut manifest = Manifest::new("eval");
    manifest.config("split", args.split.name());
    let artifact = ModelArtifact::load(&args.model)?;
    manifest.input("model", &args.model)?;
    let mut ds = read_prepared(&args.data, &mut manifest)?;
    prepare_target(&mut ds, &artifact)?;
    let net = artifact.to_network()?;
    let report = evaluate(&net, &ds, args.split.to_split())?;

    println!(
        "{} accuracy {:.4} over {} rows",
        args.split.name(),
        report.accuracy,
        report.n
    );

    if let Some(out) = &args.out {
        ensure_dir(out)?;
        let mut text = format!(
            "split = {}\nrows = {}\naccuracy = {}\n",
            args.split.name(),
            report.n,
            report.accuracy
        );
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        text.push_str(&format!("precision = {}\n", join(&report.precision)));
        text.push_str(&format!("recall = {}\n", join(&report.recall)));
        text.push_str("confusion (row = true class, column = predicted):\n");
        for row in &report.confusion {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            text.push_str(&cells.join(" "));
            text.push('\n');
        }
        let eval_path = out.join("eval.txt");
        write_text(&eval_path, &text)?;
        manifest.output("eval", &eval_path)?;
        manifest.write(&out.join(MANIFEST_FILE))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Comma-separated source profiles.
    #[arg(long, default_value = "sunny-dry")]
    pub sources: String,
    /// Comma-separated target profiles.
    #[arg(long, default_value = "humid-cloudy")]
    pub targets: String,
    /// Comma-separated annotation shares in percent.
    #[arg(long, default_value = "0,10,20,50,100")]
    pub p: String,
    /// Seeds: a comma list (`1,2,3`) or an inclusive range (`1..5`).
    #[arg(long, default_value = "1..5")]
    pub seeds: String,
    /// Half-hour rows generated per location.
    #[arg(long)]
    pub rows: Option<usize>,
    /// Output directory for results.csv and friends.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub forest: ForestFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Teacher EMA decay.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the supervised loss term.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Adaptation epochs per grid cell.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Teacher softmax temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Key-value config file layered under the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_name_list(text: &str, what: &str) -> Result<Vec<String>> {
    let names: Vec<String> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    if names.is_empty() {
        return Err(CliError::Usage(format!("empty {what} list")).into());
    }
    Ok(names)
}

fn parse_p_list(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let p: f64 = part
            .parse()
            .map_err(|_| CliError::Usage(format!("unparseable p value '{part}'")))?;
        out.push(p);
    }
    if out.is_empty() {
        return Err(CliError::Usage("empty p list".into()).into());
    }
    Ok(out)
}

fn parse_seed_list(text: &str) -> Result<Vec<u64>> {
    let bad = |t: &str| CliError::Usage(format!("unparseable seed '{t}'"));
    if let Some((a, b)) = text.split_once("..") {
        let lo: u64 = a.trim().parse().map_err(|_| bad(a))?;
        let hi: u64 = b.trim().parse().map_err(|_| bad(b))?;
        if lo > hi {
            return Err(CliError::Usage(format!("seed range {lo}..{hi} runs backwards")).into());
        }
        return Ok((lo..=hi).collect());
    }
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        out.push(part.parse().map_err(|_| bad(part))?);
    }
    if out.is_empty() {
        return Err(CliError::Usage("empty seed list".into()).into());
    }
    Ok(out)
}

pub fn run_experiment(args: &ExperimentArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mut source_opts = SourceOptions::with_seed(0);
    apply_forest_flags(&mut source_opts, &args.forest, &file)?;
    apply_train_flags(&mut source_opts, &args.train, &file)?;
    let adapt = resolve_adapt(
        &file,
        args.alpha,
        args.lambda,
        args.epochs,
        None,
        None,
        args.temperature,
        None,
        false,
        None,
    )?;

    let spec = GridSpec {
        sources: parse_name_list(&args.sources, "source")?,
        targets: parse_name_list(&args.targets, "target")?,
        p_values: parse_p_list(&args.p)?,
        seeds: parse_seed_list(&args.seeds)?,
        rows: file.resolve(args.rows, "rows", 17_520)?,
        source_opts,
        adapt,
    };

    let mut manifest = Manifest::new("experiment");
    manifest.config("sources", spec.sources.join(","));
    manifest.config("targets", spec.targets.join(","));
    manifest.config(
        "p",
        spec.p_values
            .iter()
            .map(|&p| crate::experiment::format_p(p))
            .collect::<Vec<_>>()
            .join(","),
    );
    manifest.config(
        "seeds",
        spec.seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    manifest.config("rows", spec.rows);
    record_source_options(&mut manifest, &spec.source_opts);
    record_adapt_config(&mut manifest, &spec.adapt);

    let outcome = run_grid(&spec)?;
    assert_complete(&spec, &outcome)?;

    ensure_dir(&args.out)?;
    for path in write_outcome(&outcome, &args.out)? {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "file".into());
        manifest.output(&label, &path)?;
    }
    manifest.note("cells", outcome.cells.len());
    manifest.note("failures", outcome.failures.len());
    manifest.write(&args.out.join(MANIFEST_FILE))?;

    println!(
        "grid complete: {} cells, {} failures, results in {}",
        outcome.cells.len(),
        outcome.failures.len(),
        args.out.display()
    );
    if !outcome.failures.is_empty() {
        eprintln!(
            "warning: {} cells failed; see {}",
            outcome.failures.len(),
            args.out.join("failures.csv").display()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Grid-output directory holding results.csv (and, if present,
    /// source_baselines.csv), or a path to a results CSV itself.
    #[arg(long)]
    pub results: PathBuf,
    /// Output directory for the rendered tables.
    #[arg(long)]
    pub out: PathBuf,
    /// Which rendering to echo to stdout; every file is always written.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

pub fn run_report(args: &ReportArgs) -> Result<()> {
    let results_path = if args.results.is_dir() {
        args.results.join("results.csv")
    } else {
        args.results.clone()
    };
    let baselines_path = results_path
        .parent()
        .map(|d| d.join("source_baselines.csv"))
        .filter(|p| p.is_file());

    let mut manifest = Manifest::new("report");
    manifest.config(
        "format",
        match args.format {
            Format::Text => "text",
            Format::Csv => "csv",
        },
    );
    let cells = report::read_results(&results_path)?;
    manifest.input("results", &results_path)?;

    ensure_dir(&args.out)?;
    let grid_text = report::grid_text(&cells);
    let grid_csv = report::grid_csv(&cells);
    let curve_csv = report::curve_csv(&cells);
    let grid_text_path = args.out.join("grid.txt");
    let grid_csv_path = args.out.join("grid.csv");
    let curve_path = args.out.join("curve.csv");
    write_text(&grid_text_path, &grid_text)?;
    write_text(&grid_csv_path, &grid_csv)?;
    write_text(&curve_path, &curve_csv)?;
    manifest.output("grid_text", &grid_text_path)?;
    manifest.output("grid_csv", &grid_csv_path)?;
    manifest.output("curve", &curve_path)?;

    let mut comparison_text = None;
    if let Some(path) = &baselines_path {
        let baselines = report::read_baselines(path)?;
        manifest.input("baselines", path)?;
        let text = report::comparison_text(&baselines);
        let csv = report::comparison_csv(&baselines);
        let text_path = args.out.join("comparison.txt");
        let csv_path = args.out.join("comparison.csv");
        write_text(&text_path, &text)?;
        write_text(&csv_path, &csv)?;
        manifest.output("comparison_text", &text_path)?;
        manifest.output("comparison_csv", &csv_path)?;
        comparison_text = Some(text);
    }
    manifest.write(&args.out.join(MANIFEST_FILE))?;

    match args.format {
        Format::Text => {
            print!("{grid_text}");
            if let Some(text) = comparison_text {
                println!();
                print!("{text}");
            }
        }
        Format::Csv => print!("{grid_csv}"),
    }
    Ok(())
}
