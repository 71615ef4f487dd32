use std::path::Path;

use bast_audio::{load_features, BinauralFeatures, DatasetManifest, Environment, FrontendConfig, LocalizationTarget, Split};
use bast_tensor::{Float, Tensor};

use crate::error::{CoreError, Result};

/// One model input with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub split: Split,
    pub target: LocalizationTarget,
    pub features: BinauralFeatures,
}

/// Loads every manifest record of a corpus directory as a [`Sample`].
pub fn load_samples(dir: impl AsRef<Path>, manifest: &DatasetManifest, frontend: &FrontendConfig) -> Result<Vec<Sample>> {
    let features = load_features(dir, manifest, frontend)?;
    Ok(manifest
        .records
        .iter()
        .zip(features)
        .map(|(r, features)| Sample {
            id: r.id.clone(),
            split: r.split,
            target: r.target(),
            features,
        })
        .collect())
}

pub fn select<'a>(samples: &'a [Sample], split: Split, envs: &[Environment]) -> Vec<&'a Sample> {
    samples
        .iter()
        .filter(|s| s.split == split && envs.contains(&s.target.environment))
        .collect()
}

/// Stacks a batch into `[B, H, T]` left/right inputs and `[B, 2]` targets.
pub fn batch_tensors<T: Float>(batch: &[&Sample]) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let first = batch
        .first()
        .ok_or_else(|| CoreError::Input("empty batch".into()))?;
    let (h, w) = (first.features.bins, first.features.frames);
    let mut left = Vec::with_capacity(batch.len() * h * w);
    let mut right = Vec::with_capacity(batch.len() * h * w);
    let mut coords = Vec::with_capacity(batch.len() * 2);
    for s in batch {
        if (s.features.bins, s.features.frames) != (h, w) {
            return Err(CoreError::Input(format!("sample {} has a different feature shape", s.id)));
        }
        left.extend(s.features.left.iter().map(|&v| T::from_f64_lossy(f64::from(v))));
        right.extend(s.features.right.iter().map(|&v| T::from_f64_lossy(f64::from(v))));
        coords.extend(s.target.coordinate.map(T::from_f64_lossy));
    }
    let b = batch.len();
    Ok((
        Tensor::new([b, h, w], left)?,
        Tensor::new([b, h, w], right)?,
        Tensor::new([b, 2], coords)?,
    ))
}
