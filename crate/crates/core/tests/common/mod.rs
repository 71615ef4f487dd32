#![allow(dead_code)]

use bast_core::{Integration, ModelConfig, Sharing};
use bast_tensor::{Float, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small model on a reduced spectrogram: 33×25 input, 4×3 patch grid.
pub fn tiny_config(integration: Integration, sharing: Sharing) -> ModelConfig {
    ModelConfig {
        height: 33,
        width: 25,
        patch: 16,
        stride: 6,
        dim: 32,
        layers: 1,
        heads: 2,
        mlp_dim: 32,
        dropout: 0.2,
        integration,
        sharing,
    }
}

pub fn random_input<T: Float>(batch: usize, h: usize, w: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([batch, h, w], |_| T::from_f64_lossy(rng.random_range(-1.0..1.0)))
}

pub fn unit_targets<T: Float>(batch: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    for _ in 0..batch {
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        data.extend([T::from_f64_lossy(a.sin()), T::from_f64_lossy(a.cos())]);
    }
    Tensor::new([batch, 2], data).unwrap()
}

/// Writes a small two-environment corpus at canonical spectrogram size:
/// azimuths 0, 90, 180, 270; three training sources (two train, one val per
/// stratum) and one held-out test source.
pub fn small_corpus(dir: &std::path::Path, seed: u64) {
    use bast_audio::{build_dataset, source_pool, write_corpus, Azimuth, DatasetConfig};
    let cfg = DatasetConfig {
        train_sources: source_pool("s", 3, seed),
        test_sources: source_pool("t", 1, seed + 1),
        azimuths: [0, 90, 180, 270].map(|a| Azimuth::new(a).unwrap()).to_vec(),
        ..DatasetConfig::canonical(seed)
    };
    write_corpus(dir, &build_dataset(&cfg).unwrap()).unwrap();
}

/// Minimal model at canonical geometry.
pub fn small_model(integration: Integration, sharing: Sharing) -> ModelConfig {
    ModelConfig {
        dim: 16,
        heads: 2,
        layers: 1,
        mlp_dim: 16,
        ..ModelConfig::canonical(integration, sharing)
    }
}
