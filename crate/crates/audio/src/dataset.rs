//! Corpus generation, the on-disk layout, and feature loading.
//!
//! Layout of a corpus directory:
//!
//! ```text
//! manifest.csv            one record per sample
//! AE/<id>.wav             16-bit stereo PCM, left channel first
//! RV/<id>.wav
//! features-<hash>.bin     optional feature cache
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AudioError, Result};
use crate::features::{load_feature_cache, save_feature_cache, BinauralFeatures, FrontendConfig};
use crate::geometry::{Azimuth, Environment, LocalizationTarget};
use crate::hash::config_hash;
use crate::render::{render_binaural, SceneConfig};
use crate::source::{source_pool, SourceSpec};
use crate::waveform::Waveform;

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = AudioError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(AudioError::Parameter(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub sample_rate: u32,
    pub duration_secs: f64,
    /// Sources rendered into the train and validation splits.
    pub train_sources: Vec<SourceSpec>,
    /// Held-out sources, rendered into the test split only.
    pub test_sources: Vec<SourceSpec>,
    pub azimuths: Vec<Azimuth>,
    pub environments: Vec<Environment>,
    /// Reverberant scene; the anechoic scene is the same with no reflections.
    pub scene: SceneConfig,
    /// Fraction of each (azimuth, environment) stratum assigned to train.
    pub split_ratio: f64,
    pub seed: u64,
}

impl DatasetConfig {
    /// 500 ms at 16 kHz, all 36 azimuths in both environments, eight
    /// training sources and four held-out test sources.
    pub fn canonical(seed: u64) -> Self {
        Self {
            sample_rate: 16_000,
            duration_secs: 0.5,
            train_sources: source_pool("src", 8, seed),
            test_sources: source_pool("held", 4, seed ^ 0x5EED),
            azimuths: Azimuth::all(),
            environments: Environment::ALL.to_vec(),
            scene: SceneConfig::reverberant(),
            split_ratio: 0.75,
            seed,
        }
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    pub fn scene_for(&self, env: Environment) -> SceneConfig {
        match env {
            Environment::Anechoic => SceneConfig {
                reflection_order: 0,
                ..self.scene
            },
            Environment::Reverberant => self.scene,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(AudioError::Parameter(format!(
                "split ratio must lie in (0, 1), got {}",
                self.split_ratio
            )));
        }
        if self.train_sources.is_empty() {
            return Err(AudioError::Parameter("at least one training source is required".into()));
        }
        if self.azimuths.is_empty() || self.environments.is_empty() {
            return Err(AudioError::Parameter("no azimuths or environments selected".into()));
        }
        let mut ids = HashSet::new();
        for s in self.train_sources.iter().chain(&self.test_sources) {
            if !ids.insert(&s.id) {
                return Err(AudioError::Parameter(format!(
                    "source id `{}` appears more than once across pools",
                    s.id
                )));
            }
        }
        let mut az = self.azimuths.clone();
        az.sort();
        az.dedup();
        let mut envs = self.environments.clone();
        envs.sort();
        envs.dedup();
        if az.len() != self.azimuths.len() || envs.len() != self.environments.len() {
            return Err(AudioError::Parameter("duplicate azimuth or environment".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub source_id: String,
    pub azimuth: Azimuth,
    pub environment: Environment,
    pub split: Split,
    /// Relative to the corpus directory.
    pub path: String,
    pub config_hash: String,
}

impl ManifestRecord {
    pub fn target(&self) -> LocalizationTarget {
        LocalizationTarget::new(self.azimuth, self.environment)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub config_hash: String,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let records = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRecord>, _>>()?;
        let hash = records
            .first()
            .map(|r| r.config_hash.clone())
            .ok_or_else(|| AudioError::Manifest("empty manifest".into()))?;
        if records.iter().any(|r| r.config_hash != hash) {
            return Err(AudioError::Manifest("records carry different config hashes".into()));
        }
        Ok(Self {
            config_hash: hash,
            records,
        })
    }
}

/// A rendered corpus held in memory, samples aligned with the manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Waveform>,
}

fn stratum_seed(seed: u64, az: Azimuth, env: Environment) -> u64 {
    let tag = az.degrees() as u64 * 2 + env as u64;
    seed ^ (tag + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Assigns splits and renders every (source, azimuth, environment) triple.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let hash = cfg.hash();
    let mut records = Vec::new();
    for &env in &cfg.environments {
        for &az in &cfg.azimuths {
            let mut order: Vec<usize> = (0..cfg.train_sources.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(stratum_seed(cfg.seed, az, env)));
            let n = order.len();
            let mut n_train = (cfg.split_ratio * n as f64).round() as usize;
            if n >= 2 {
                n_train = n_train.clamp(1, n - 1);
            }
            let mut train_rank = vec![false; n];
            for &i in &order[..n_train] {
                train_rank[i] = true;
            }
            let pools = cfg
                .train_sources
                .iter()
                .enumerate()
                .map(|(i, s)| (s, if train_rank[i] { Split::Train } else { Split::Val }))
                .chain(cfg.test_sources.iter().map(|s| (s, Split::Test)));
            for (s, split) in pools {
                let id = format!("{}_az{:03}_{}", env.tag(), az.degrees(), s.id);
                records.push(ManifestRecord {
                    path: format!("{}/{id}.wav", env.tag()),
                    id,
                    source_id: s.id.clone(),
                    azimuth: az,
                    environment: env,
                    split,
                    config_hash: hash.clone(),
                });
            }
        }
    }

    let sources: BTreeMap<&str, Waveform> = cfg
        .train_sources
        .par_iter()
        .chain(cfg.test_sources.par_iter())
        .map(|s| Ok((s.id.as_str(), s.render(cfg.duration_secs, cfg.sample_rate)?)))
        .collect::<Result<_>>()?;
    let samples = records
        .par_iter()
        .map(|r| render_binaural(&sources[r.source_id.as_str()], &r.target(), &cfg.scene_for(r.environment)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest: DatasetManifest {
            config_hash: hash,
            records,
        },
        samples,
    })
}

fn to_pcm16(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: w.num_channels() as u16,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for i in 0..w.len() {
        for c in 0..w.num_channels() {
            writer.write_sample(to_pcm16(w.channel(c)[i]))?;
        }
    }
    writer.finalize()?;
    Ok(())
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(AudioError::Input("only 16-bit integer WAV is supported".into()));
    }
    let nch = spec.channels as usize;
    let mut channels = vec![Vec::new(); nch];
    for (i, s) in reader.samples::<i16>().enumerate() {
        channels[i % nch].push(f64::from(s?) / 32768.0);
    }
    Waveform::new(channels, spec.sample_rate)
}

/// Writes WAV files and the manifest under `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    for env in data.manifest.records.iter().map(|r| r.environment) {
        fs::create_dir_all(dir.join(env.tag()))?;
    }
    data.manifest
        .records
        .par_iter()
        .zip(&data.samples)
        .try_for_each(|(r, w)| write_wav(dir.join(&r.path), w))?;
    data.manifest.write(dir.join(MANIFEST_FILE))
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    DatasetManifest::read(dir.as_ref().join(MANIFEST_FILE))
}

pub fn feature_cache_path(dir: impl AsRef<Path>, manifest: &DatasetManifest, cfg: &FrontendConfig) -> (PathBuf, String) {
    let ids: Vec<&str> = manifest.records.iter().map(|r| r.id.as_str()).collect();
    let hash = config_hash(&(&manifest.config_hash, cfg, ids));
    (dir.as_ref().join(format!("features-{hash}.bin")), hash)
}

/// Features for every manifest record, in manifest order. A cache file is
/// read when its hash matches and written otherwise.
pub fn load_features(dir: impl AsRef<Path>, manifest: &DatasetManifest, cfg: &FrontendConfig) -> Result<Vec<BinauralFeatures>> {
    let dir = dir.as_ref();
    let (cache, hash) = feature_cache_path(dir, manifest, cfg);
    if let Some(items) = load_feature_cache(&cache, &hash)? {
        let mut by_id: BTreeMap<String, BinauralFeatures> = items.into_iter().collect();
        let found: Option<Vec<_>> = manifest.records.iter().map(|r| by_id.remove(&r.id)).collect();
        if let Some(f) = found {
            return Ok(f);
        }
    }
    let features = manifest
        .records
        .par_iter()
        .map(|r| BinauralFeatures::from_waveform(&read_wav(dir.join(&r.path))?, cfg))
        .collect::<Result<Vec<_>>>()?;
    save_feature_cache(
        &cache,
        &hash,
        manifest.records.iter().map(|r| r.id.as_str()).zip(&features),
    )?;
    Ok(features)
}
