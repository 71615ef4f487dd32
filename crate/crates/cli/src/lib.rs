//! `bast` command line.
//!
//! Exit codes: 0 on success, 1 on a usage error (unknown flag, missing
//! required input), 2 when a command fails at runtime.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use bast_audio::{build_dataset, read_manifest, source_pool, write_corpus, Azimuth, DatasetConfig, Environment, Split};
use bast_core::data::{batch_tensors, load_samples, select};
use bast_core::metrics::{evaluate, hemifield_test, per_azimuth, write_hemifield, write_table, TrainEnvironments};
use bast_core::rollout::{bast_rollout, export_heatmap, HeatmapMeta};
use bast_core::trainer::{run_env_transfer, run_grid};
use bast_core::{train, BastModel, ExperimentConfig, Integration, LossKind, ModelConfig, Sharing};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "bast", version, about = "Binaural sound localization with spectrogram transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic binaural corpus.
    GenData(GenData),
    /// Train one model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus split.
    Eval(EvalArgs),
    /// Train and evaluate every cell of a loss × integration × sharing grid.
    Grid(GridArgs),
    /// Train on AE, RV and AE+RV and test each model on both environments.
    EnvTransfer(TrainArgs),
    /// Export attention-rollout heat maps for a few samples.
    Rollout(RolloutArgs),
    /// Print the parameter count of a model configuration.
    InspectParams(InspectArgs),
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sources rendered into the train and validation splits.
    #[arg(long, default_value_t = 8)]
    train_sources: usize,
    /// Held-out sources rendered into the test split.
    #[arg(long, default_value_t = 4)]
    test_sources: usize,
    /// Comma-separated environments (AE, RV).
    #[arg(long, value_delimiter = ',', default_value = "AE,RV")]
    env: Vec<String>,
    /// Comma-separated azimuths in degrees; all 36 when omitted.
    #[arg(long, value_delimiter = ',')]
    azimuths: Vec<u16>,
    #[arg(long, default_value_t = 0.75)]
    split_ratio: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Profile {
    Desk,
    Canonical,
}

#[derive(Args, Debug)]
struct Overrides {
    /// Experiment configuration file (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in defaults used when no configuration file is given.
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    integration: Option<String>,
    #[arg(long)]
    sharing: Option<String>,
    /// Training environments: AE, RV or AE+RV.
    #[arg(long)]
    train_env: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Stop once the training-split AD falls below this many degrees.
    #[arg(long)]
    stop_below: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Overrides,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long, value_delimiter = ',', default_value = "mse,ad,hybrid")]
    losses: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "add,sub,concat")]
    integrations: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "NSP,SP")]
    sharings: Vec<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Split to score: val or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Experiment configuration whose frontend settings are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

#[derive(Args, Debug)]
struct RolloutArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Sample ids to analyse; the first `--count` test samples otherwise.
    #[arg(long, value_delimiter = ',')]
    samples: Vec<String>,
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long, value_enum, default_value = "canonical")]
    profile: Profile,
    /// Experiment configuration whose model section is inspected.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    integration: Option<String>,
    #[arg(long)]
    sharing: Option<String>,
    /// Also build the model and count its allocated parameters.
    #[arg(long)]
    instantiate: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn dispatch(cmd: Command) -> Outcome {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => {
            let cfg = resolve(&a.common)?;
            let outcome = train(&cfg)?;
            let s = &outcome.val_summary;
            println!(
                "trained {} epochs; validation AD {:.3} deg, MSE {:.5}; checkpoint {}",
                outcome.log.epochs.len(),
                s.mean_ad_deg,
                s.mean_mse,
                outcome.final_checkpoint.display()
            );
            Ok(())
        }
        Command::Eval(a) => eval(a),
        Command::Grid(a) => {
            let cfg = resolve(&a.common)?;
            let losses = parse_list::<LossKind>(&a.losses)?;
            let integrations = parse_list::<Integration>(&a.integrations)?;
            let sharings = parse_list::<Sharing>(&a.sharings)?;
            let rows = run_grid(&cfg, &losses, &integrations, &sharings)?;
            for r in &rows {
                println!("{}\t{}\t{}\tAD {}\tMSE {}\t{}", r.loss, r.integration, r.sharing, r.ad_deg, r.mse, r.status);
            }
            Ok(())
        }
        Command::EnvTransfer(a) => {
            let cfg = resolve(&a.common)?;
            for c in run_env_transfer(&cfg)? {
                println!("{} -> {}: AD {:.3} deg, MSE {:.5}", c.trained_on.tag(), c.tested_on, c.mean_ad_deg, c.mean_mse);
            }
            Ok(())
        }
        Command::Rollout(a) => rollout(a),
        Command::InspectParams(a) => inspect(a),
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse_list<T: std::str::FromStr>(items: &[String]) -> std::result::Result<Vec<T>, Failure>
where
    T::Err: std::fmt::Display,
{
    items
        .iter()
        .map(|s| s.trim().parse::<T>().map_err(|e| usage(e.to_string())))
        .collect()
}

fn parse_one<T: std::str::FromStr>(s: &str) -> std::result::Result<T, Failure>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| usage(e.to_string()))
}

fn resolve(o: &Overrides) -> std::result::Result<ExperimentConfig, Failure> {
    let mut cfg = match &o.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => match o.profile {
            Profile::Desk => ExperimentConfig::desk("data", "runs"),
            Profile::Canonical => ExperimentConfig::canonical("data", "runs"),
        },
    };
    if o.config.is_none() && o.data.is_none() {
        return Err(usage("--data is required without --config"));
    }
    if let Some(v) = &o.data {
        cfg.data_dir = v.clone();
    }
    if let Some(v) = &o.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.lr {
        cfg.optimizer.lr = v;
    }
    if let Some(v) = &o.loss {
        cfg.loss.kind = parse_one(v)?;
    }
    if let Some(v) = o.alpha {
        cfg.loss.alpha = v;
    }
    if let Some(v) = &o.integration {
        cfg.model.integration = parse_one(v)?;
    }
    if let Some(v) = &o.sharing {
        cfg.model.sharing = parse_one(v)?;
    }
    if let Some(v) = &o.train_env {
        cfg.train_environments = parse_one::<TrainEnvironments>(v)?;
    }
    if let Some(v) = o.dropout {
        cfg.model.dropout = v;
    }
    if o.stop_below.is_some() {
        cfg.stop_below_train_ad = o.stop_below;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn gen_data(a: GenData) -> Outcome {
    let environments = parse_list::<Environment>(&a.env)?;
    let azimuths = if a.azimuths.is_empty() {
        Azimuth::all()
    } else {
        a.azimuths
            .iter()
            .map(|&d| Azimuth::new(d).map_err(|e| usage(e.to_string())))
            .collect::<std::result::Result<_, _>>()?
    };
    let cfg = DatasetConfig {
        train_sources: source_pool("src", a.train_sources, a.seed),
        test_sources: source_pool("held", a.test_sources, a.seed ^ 0x5EED),
        azimuths,
        environments,
        split_ratio: a.split_ratio,
        ..DatasetConfig::canonical(a.seed)
    };
    let data = build_dataset(&cfg)?;
    write_corpus(&a.out, &data)?;
    fs::write(a.out.join("dataset_config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let m = &data.manifest;
    println!(
        "wrote {} recordings ({} train, {} val, {} test) to {}",
        m.records.len(),
        m.count(Split::Train),
        m.count(Split::Val),
        m.count(Split::Test),
        a.out.display()
    );
    Ok(())
}

fn frontend_of(config: &Option<PathBuf>) -> std::result::Result<bast_audio::FrontendConfig, Failure> {
    Ok(match config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?.frontend,
        None => bast_audio::FrontendConfig::default(),
    })
}

fn checkpoint(path: &Option<PathBuf>) -> std::result::Result<&Path, Failure> {
    let p = path.as_deref().ok_or_else(|| usage("--checkpoint is required"))?;
    if !p.exists() {
        return Err(usage(format!("checkpoint {} does not exist", p.display())));
    }
    Ok(p)
}

fn eval(a: EvalArgs) -> Outcome {
    let ckpt = checkpoint(&a.checkpoint)?;
    let split: Split = parse_one(&a.split)?;
    let model = BastModel::<f32>::load_any(ckpt)?;
    let frontend = frontend_of(&a.config)?;
    let manifest = read_manifest(&a.data)?;
    let samples = load_samples(&a.data, &manifest, &frontend)?;
    fs::create_dir_all(&a.out)?;
    let mut reports = Vec::new();
    let mut summaries = Vec::new();
    for env in Environment::ALL {
        let subset = select(&samples, split, &[env]);
        if subset.is_empty() {
            continue;
        }
        let (records, summary) = evaluate(&model, &subset, a.batch_size)?;
        println!("{env}: {} samples, AD {:.3} deg, MSE {:.5}", summary.count, summary.mean_ad_deg, summary.mean_mse);
        write_table(&a.out, &format!("per_azimuth_{}", env.tag()), &per_azimuth(&records))?;
        match hemifield_test(env.tag(), &records) {
            Ok(r) => reports.push(r),
            Err(e) => log::warn!("{env}: hemifield test skipped: {e}"),
        }
        summaries.push(summary);
    }
    if summaries.is_empty() {
        return Err(anyhow!("split {split} has no samples").into());
    }
    let all = select(&samples, split, &Environment::ALL);
    let (records, summary) = evaluate(&model, &all, a.batch_size)?;
    write_table(&a.out, "overall", std::slice::from_ref(&summary))?;
    write_table(&a.out, "per_azimuth", &per_azimuth(&records))?;
    write_table(&a.out, "records", &records)?;
    if !reports.is_empty() {
        bast_core::metrics::adjust_family(&mut reports, "eval: environment x metric");
        write_hemifield(&a.out, &reports)?;
    }
    Ok(())
}

fn rollout(a: RolloutArgs) -> Outcome {
    let ckpt = checkpoint(&a.checkpoint)?;
    let model = BastModel::<f32>::load_any(ckpt)?;
    let frontend = frontend_of(&a.config)?;
    let manifest = read_manifest(&a.data)?;
    let samples = load_samples(&a.data, &manifest, &frontend)?;
    let chosen: Vec<_> = if a.samples.is_empty() {
        select(&samples, Split::Test, &Environment::ALL).into_iter().take(a.count).collect()
    } else {
        a.samples
            .iter()
            .map(|id| {
                samples
                    .iter()
                    .find(|s| &s.id == id)
                    .ok_or_else(|| usage(format!("no sample with id `{id}`")))
            })
            .collect::<std::result::Result<_, _>>()?
    };
    if chosen.is_empty() {
        return Err(usage("no samples selected"));
    }
    for s in chosen {
        let (l, r, _) = batch_tensors::<f32>(&[s])?;
        let record = bast_rollout(&model, &l, &r)?.remove(0);
        let meta = HeatmapMeta {
            sample_id: s.id.clone(),
            azimuth: s.target.azimuth.degrees(),
            environment: s.target.environment.tag().to_string(),
            n_h: record.grid.n_h,
            n_t: record.grid.n_t,
            overlay_height: s.features.bins,
            overlay_width: s.features.frames,
        };
        export_heatmap(&a.out, &record, &meta)?;
        println!("{}: rollout written", s.id);
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Outcome {
    let mut model = match &a.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?.model,
        None => match a.profile {
            Profile::Canonical => ModelConfig::canonical(Integration::Sub, Sharing::Separate),
            Profile::Desk => ModelConfig::desk(Integration::Sub, Sharing::Separate),
        },
    };
    if let Some(v) = &a.integration {
        model.integration = parse_one(v)?;
    }
    if let Some(v) = &a.sharing {
        model.sharing = parse_one(v)?;
    }
    model.validate().map_err(|e| usage(e.to_string()))?;
    let count = model.parameter_count();
    println!("{} {}: {count} parameters", model.sharing, model.integration);
    if a.instantiate {
        let built = BastModel::<f32>::new(model, a.seed)?;
        println!("allocated: {}", built.count_parameters());
    }
    Ok(())
}
