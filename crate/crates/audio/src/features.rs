//! Model-ready binaural features: log compression followed by
//! standardization computed jointly over both ears.

use std::path::Path;

use bast_tensor::{Tensor, TensorFile};
use serde::{Deserialize, Serialize};

use crate::error::{AudioError, Result};
use crate::hash::config_hash;
use crate::stft::{binaural_spectrogram, Spectrogram, StftConfig};
use crate::waveform::Waveform;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub stft: StftConfig,
    pub log_compress: bool,
    pub standardize: bool,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            log_compress: true,
            standardize: true,
        }
    }
}

impl FrontendConfig {
    /// Plain magnitudes, no compression or scaling.
    pub fn raw() -> Self {
        Self {
            log_compress: false,
            standardize: false,
            ..Self::default()
        }
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// A pair of equally shaped left/right feature grids, row-major
/// `bins × frames` each.
#[derive(Clone, Debug, PartialEq)]
pub struct BinauralFeatures {
    pub bins: usize,
    pub frames: usize,
    pub left: Vec<f32>,
    pub right: Vec<f32>,
}

impl BinauralFeatures {
    pub fn from_spectrograms(left: &Spectrogram, right: &Spectrogram) -> Result<Self> {
        if left.shape() != right.shape() {
            return Err(AudioError::Input(format!(
                "ear shapes differ: {:?} vs {:?}",
                left.shape(),
                right.shape()
            )));
        }
        Ok(Self {
            bins: left.bins(),
            frames: left.frames(),
            left: left.data().to_vec(),
            right: right.data().to_vec(),
        })
    }

    pub fn from_waveform(w: &Waveform, cfg: &FrontendConfig) -> Result<Self> {
        let (l, r) = binaural_spectrogram(w, &cfg.stft)?;
        let mut f = Self::from_spectrograms(&l, &r)?;
        if cfg.log_compress {
            f.map(|x| x.ln_1p());
        }
        if cfg.standardize {
            f.standardize();
        }
        Ok(f)
    }

    fn map(&mut self, g: impl Fn(f32) -> f32) {
        for x in self.left.iter_mut().chain(self.right.iter_mut()) {
            *x = g(*x);
        }
    }

    /// Shifts and scales both ears by the mean and standard deviation of
    /// their union. A constant input only has its mean removed.
    pub fn standardize(&mut self) {
        let n = (self.left.len() + self.right.len()) as f64;
        let all = || self.left.iter().chain(&self.right).map(|&x| f64::from(x));
        let mean = all().sum::<f64>() / n;
        let var = all().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 { 1.0 / sd } else { 1.0 };
        self.map(|x| ((f64::from(x) - mean) * scale) as f32);
    }

    /// `[2, bins, frames]` tensor with the left ear first.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data = [self.left.as_slice(), self.right.as_slice()].concat();
        Tensor::new([2, self.bins, self.frames], data).expect("feature extents are consistent")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let &[2, bins, frames] = t.shape() else {
            return Err(AudioError::Input(format!(
                "expected a [2, H, T] tensor, got {:?}",
                t.shape()
            )));
        };
        let (left, right) = t.data().split_at(bins * frames);
        Ok(Self {
            bins,
            frames,
            left: left.to_vec(),
            right: right.to_vec(),
        })
    }
}

/// Saves features keyed by sample id, tagged with `hash`.
pub fn save_feature_cache<'a>(
    path: impl AsRef<Path>,
    hash: &str,
    items: impl IntoIterator<Item = (&'a str, &'a BinauralFeatures)>,
) -> Result<()> {
    let mut file = TensorFile::new().with_meta("config_hash", hash);
    for (id, f) in items {
        file.push(id, &f.to_tensor())?;
    }
    file.save(path)?;
    Ok(())
}

/// Loads a cache written by [`save_feature_cache`]. Returns `None` when the
/// file is missing or was produced under a different hash.
pub fn load_feature_cache(
    path: impl AsRef<Path>,
    hash: &str,
) -> Result<Option<Vec<(String, BinauralFeatures)>>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(None);
    }
    let file = TensorFile::load(path)?;
    if file.meta.get("config_hash").map(String::as_str) != Some(hash) {
        return Ok(None);
    }
    file.tensors()
        .map(|(id, t)| Ok((id.to_string(), BinauralFeatures::from_tensor(t)?)))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}
