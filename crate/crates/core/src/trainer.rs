//! Training runs, experiment grids and environment-transfer studies.
//!
//! A run reads a corpus directory, trains on the train split restricted to
//! the configured environments, validates each epoch, and writes under
//! `out_dir`:
//!
//! ```text
//! config.toml          the resolved experiment configuration
//! train_log.jsonl      one JSON object per epoch
//! access_log.tsv       every sample loaded (id, environment, split)
//! final.bin, best.bin  checkpoints (best by validation AD)
//! last_good.bin        written only when a run aborts on a non-finite loss
//! overall.csv/.json, per_azimuth.csv/.json   validation metrics of the final model
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use bast_audio::{read_manifest, DatasetManifest, Environment, FrontendConfig, Split};
use bast_tensor::{Adam, AdamConfig, Graph};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Integration, ModelConfig, Sharing};
use crate::data::{batch_tensors, load_samples, select, Sample};
use crate::error::{CoreError, Result};
use crate::hash::config_hash;
use crate::losses::{loss, LossConfig, LossKind};
use crate::metrics::{
    adjust_family, environment_transfer, evaluate, hemifield_test, per_azimuth, write_hemifield, write_table,
    EvalRecord, EvalSummary, HemifieldReport, Predictor, TrainEnvironments, TransferCell,
};
use crate::model::BastModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub train_environments: TrainEnvironments,
    /// Stop once the eval-mode training-split AD (degrees) falls below this.
    pub stop_below_train_ad: Option<f64>,
    pub optimizer: AdamConfig,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub frontend: FrontendConfig,
}

impl ExperimentConfig {
    /// Full-size settings: 50 epochs, batch 48, learning rate 1e-4.
    pub fn canonical(data_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            out_dir: out_dir.into(),
            seed: 0,
            epochs: 50,
            batch_size: 48,
            eval_batch_size: 48,
            train_environments: TrainEnvironments::Both,
            stop_below_train_ad: None,
            optimizer: AdamConfig::default(),
            loss: LossConfig::default(),
            model: ModelConfig::canonical(Integration::Sub, Sharing::Separate),
            frontend: FrontendConfig::default(),
        }
    }

    /// Small model and batch for CPU-scale experiments.
    pub fn desk(data_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            eval_batch_size: 32,
            optimizer: AdamConfig {
                lr: 5e-4,
                ..AdamConfig::default()
            },
            model: ModelConfig::desk(Integration::Sub, Sharing::Separate),
            ..Self::canonical(data_dir, out_dir)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 || self.epochs == 0 {
            return Err(CoreError::Config("batch sizes and epochs must be at least 1".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(CoreError::Config(format!("learning rate {} must be positive", self.optimizer.lr)));
        }
        self.model.validate()?;
        self.loss.validate()
    }

    /// Identity of the experiment. The output directory is excluded so that
    /// reruns elsewhere produce identical artifacts.
    pub fn hash(&self) -> String {
        let mut key = self.clone();
        key.out_dir = PathBuf::new();
        config_hash(&key)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CoreError::Toml(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoreError::Toml(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ad_deg: f64,
    pub val_mse: f64,
    pub train_ad_deg: Option<f64>,
    pub wall_secs: f64,
    pub shuffle_seed: u64,
    pub dropout_seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let epochs = fs::read_to_string(path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { epochs })
    }

    pub fn best(&self) -> Option<&EpochLog> {
        self.epochs.iter().min_by(|a, b| a.val_ad_deg.total_cmp(&b.val_ad_deg))
    }
}

pub struct TrainOutcome {
    pub model: BastModel<f32>,
    pub log: TrainLog,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub val_records: Vec<EvalRecord>,
    pub val_summary: EvalSummary,
}

/// Independent stream of seeds derived from the master seed (SplitMix64).
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Loads the samples of the listed environments and appends their ids to
/// `access_log.tsv` in `out_dir`.
pub fn load_filtered(
    data_dir: &Path,
    out_dir: &Path,
    manifest: &DatasetManifest,
    envs: &[Environment],
    frontend: &FrontendConfig,
) -> Result<Vec<Sample>> {
    let filtered = DatasetManifest {
        config_hash: manifest.config_hash.clone(),
        records: manifest
            .records
            .iter()
            .filter(|r| envs.contains(&r.environment))
            .cloned()
            .collect(),
    };
    if filtered.records.is_empty() {
        return Err(CoreError::Input(format!("no samples for environments {envs:?}")));
    }
    let samples = load_samples(data_dir, &filtered, frontend)?;
    fs::create_dir_all(out_dir)?;
    let mut log = BufWriter::new(
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(out_dir.join("access_log.tsv"))?,
    );
    for r in &filtered.records {
        writeln!(log, "{}\t{}\t{}", r.id, r.environment, r.split)?;
    }
    log.flush()?;
    Ok(samples)
}

fn checkpoint_meta(cfg: &ExperimentConfig, epoch: usize) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("experiment_hash".to_string(), cfg.hash()),
        ("epoch".to_string(), epoch.to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
    ])
}

/// Trains a model as described by `cfg`.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let out = cfg.out_dir.as_path();
    fs::create_dir_all(out)?;
    let _ = fs::remove_file(out.join("access_log.tsv"));
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;

    let manifest = read_manifest(&cfg.data_dir)?;
    let envs = cfg.train_environments.environments();
    let samples = load_filtered(&cfg.data_dir, out, &manifest, &envs, &cfg.frontend)?;
    let train_set = select(&samples, Split::Train, &envs);
    let val_set = select(&samples, Split::Val, &envs);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CoreError::Input(format!(
            "environment filter {} leaves {} train and {} validation samples",
            cfg.train_environments.tag(),
            train_set.len(),
            val_set.len()
        )));
    }

    let mut model = BastModel::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg.optimizer, model.store());
    let hash = cfg.hash();
    let final_path = out.join("final.bin");
    let best_path = out.join("best.bin");
    let mut log_file = BufWriter::new(File::create(out.join("train_log.jsonl"))?);
    let mut log = TrainLog::default();
    let mut best_ad = f64::INFINITY;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let shuffle_seed = derive_seed(cfg.seed, SHUFFLE_STREAM, epoch as u64);
        let dropout_seed = derive_seed(cfg.seed, DROPOUT_STREAM, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(dropout_seed);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train_set[i]).collect();
            let (l, r, target) = batch_tensors::<f32>(&batch)?;
            let (value, grads) = {
                let mut g = Graph::new();
                let pass = model.forward(&mut g, &l, &r, Some(&mut dropout_rng))?;
                let t = g.constant(target);
                let objective = loss(&mut g, pass.output, t, &cfg.loss)?;
                let value = f64::from(g.value(objective).data()[0]);
                if !value.is_finite() {
                    (value, None)
                } else {
                    g.backward(objective)?;
                    (value, Some(g.param_grads(model.store())))
                }
            };
            let step = match grads {
                Some(grads) => adam.step(model.store_mut(), &grads).map_err(CoreError::from),
                None => Err(CoreError::Run("non-finite loss".into())),
            };
            if let Err(e) = step {
                let path = out.join("last_good.bin");
                model.save(&path, &checkpoint_meta(cfg, epoch - 1))?;
                log::error!("epoch {epoch} batch {bi}: {e} (loss {value})");
                return Err(CoreError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    checkpoint: path.display().to_string(),
                });
            }
            loss_sum += value;
            batches += 1;
        }

        let (_, val) = evaluate(&model, &val_set, cfg.eval_batch_size)?;
        let train_ad = match cfg.stop_below_train_ad {
            Some(_) => Some(evaluate(&model, &train_set, cfg.eval_batch_size)?.1.mean_ad_deg),
            None => None,
        };
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_ad_deg: val.mean_ad_deg,
            val_mse: val.mean_mse,
            train_ad_deg: train_ad,
            wall_secs: started.elapsed().as_secs_f64(),
            shuffle_seed,
            dropout_seed,
            config_hash: hash.clone(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val AD {:.2} deg{}",
            entry.train_loss,
            entry.val_ad_deg,
            train_ad.map(|a| format!(", train AD {a:.2} deg")).unwrap_or_default()
        );
        serde_json::to_writer(&mut log_file, &entry)?;
        writeln!(log_file)?;
        log_file.flush()?;
        log.epochs.push(entry);

        if val.mean_ad_deg < best_ad {
            best_ad = val.mean_ad_deg;
            model.save(&best_path, &checkpoint_meta(cfg, epoch))?;
        }
        if let (Some(limit), Some(ad)) = (cfg.stop_below_train_ad, train_ad) {
            if ad < limit {
                break;
            }
        }
    }

    let last_epoch = log.epochs.len();
    model.save(&final_path, &checkpoint_meta(cfg, last_epoch))?;
    let (val_records, val_summary) = evaluate(&model, &val_set, cfg.eval_batch_size)?;
    write_table(out, "overall", std::slice::from_ref(&val_summary))?;
    write_table(out, "per_azimuth", &per_azimuth(&val_records))?;
    Ok(TrainOutcome {
        model,
        log,
        final_checkpoint: final_path,
        best_checkpoint: best_path,
        val_records,
        val_summary,
    })
}

/// One cell of an experiment grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub loss: LossKind,
    pub integration: Integration,
    pub sharing: Sharing,
    pub ad_deg: String,
    /// "—" for cells trained with the angular loss alone.
    pub mse: String,
    pub status: String,
}

pub const NO_VALUE: &str = "\u{2014}";

/// Cells in table order: loss, then integration, then sharing.
pub fn grid_cells(
    losses: &[LossKind],
    integrations: &[Integration],
    sharings: &[Sharing],
) -> Vec<(LossKind, Integration, Sharing)> {
    let mut cells = Vec::new();
    for &l in losses {
        for &i in integrations {
            for &s in sharings {
                cells.push((l, i, s));
            }
        }
    }
    cells
}

/// Trains and evaluates every cell; a failing cell is recorded and the
/// grid continues. Writes `grid.csv`/`.json` and `hemifield.csv`/`.json`
/// (one FDR family over all cells and both metrics) under `base.out_dir`.
pub fn run_grid(
    base: &ExperimentConfig,
    losses: &[LossKind],
    integrations: &[Integration],
    sharings: &[Sharing],
) -> Result<Vec<GridRow>> {
    let cells = grid_cells(losses, integrations, sharings);
    if cells.is_empty() {
        return Err(CoreError::Config("experiment grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(cells.len());
    let mut reports: Vec<HemifieldReport> = Vec::new();
    for (l, i, s) in cells {
        let name = format!("{l}_{i}_{s}");
        let mut cfg = base.clone();
        cfg.loss.kind = l;
        cfg.model.integration = i;
        cfg.model.sharing = s;
        cfg.out_dir = base.out_dir.join(&name);
        let row = |ad: String, mse: String, status: String| GridRow {
            loss: l,
            integration: i,
            sharing: s,
            ad_deg: ad,
            mse,
            status,
        };
        match train(&cfg) {
            Ok(outcome) => {
                let v = &outcome.val_summary;
                let mse = if l == LossKind::Ad {
                    NO_VALUE.to_string()
                } else {
                    format!("{:.6}", v.mean_mse)
                };
                match hemifield_test(&name, &outcome.val_records) {
                    Ok(rep) => reports.push(rep),
                    Err(e) => log::warn!("{name}: hemifield test skipped: {e}"),
                }
                rows.push(row(format!("{:.4}", v.mean_ad_deg), mse, "ok".into()));
            }
            Err(e) => {
                log::error!("{name}: {e}");
                rows.push(row(NO_VALUE.into(), NO_VALUE.into(), format!("failed: {e}")));
            }
        }
    }
    write_table(&base.out_dir, "grid", &rows)?;
    if !reports.is_empty() {
        adjust_family(&mut reports, "grid: loss x integration x sharing x metric");
        write_hemifield(&base.out_dir, &reports)?;
    }
    Ok(rows)
}

/// Trains one model per environment filter and evaluates each on the
/// anechoic and reverberant test splits. Writes `env_transfer.csv`/`.json`.
pub fn run_env_transfer(base: &ExperimentConfig) -> Result<Vec<TransferCell>> {
    let mut models = Vec::new();
    for filter in TrainEnvironments::ALL {
        let mut cfg = base.clone();
        cfg.train_environments = filter;
        cfg.out_dir = base.out_dir.join(format!("train_{}", filter.tag().replace('+', "_")));
        models.push((filter, train(&cfg)?.model));
    }
    let manifest = read_manifest(&base.data_dir)?;
    let samples = load_filtered(&base.data_dir, &base.out_dir, &manifest, &Environment::ALL, &base.frontend)?;
    let tests = select(&samples, Split::Test, &Environment::ALL);
    let refs: Vec<(TrainEnvironments, &dyn Predictor)> =
        models.iter().map(|(f, m)| (*f, m as &dyn Predictor)).collect();
    let cells = environment_transfer(&refs, &tests, base.eval_batch_size)?;
    write_table(&base.out_dir, "env_transfer", &cells)?;
    Ok(cells)
}
