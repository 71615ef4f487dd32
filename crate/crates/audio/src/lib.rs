//! Synthetic binaural localization corpus and the spectrogram frontend.
//!
//! [`render_binaural`] places a mono source on the 1 m azimuth circle around
//! a spherical head, optionally inside a reverberant shoebox room.
//! [`build_dataset`] renders a stratified corpus and [`BinauralFeatures`]
//! turns stereo waveforms into the left/right spectrogram pair fed to the
//! model.

mod dataset;
mod error;
mod features;
mod geometry;
mod hash;
mod render;
mod source;
mod stft;
mod waveform;
mod window;

pub use dataset::{
    build_dataset, feature_cache_path, load_features, read_manifest, read_wav, write_corpus, write_wav, Dataset,
    DatasetConfig, DatasetManifest, ManifestRecord, Split, MANIFEST_FILE,
};
pub use error::{AudioError, Result};
pub use features::{load_feature_cache, save_feature_cache, BinauralFeatures, FrontendConfig};
pub use geometry::{Azimuth, Environment, Hemifield, LocalizationTarget, AZIMUTH_STEP, NUM_AZIMUTHS};
pub use hash::config_hash;
pub use render::{interaural_lag, render_binaural, SceneConfig};
pub use source::{make_source, source_pool, SourceKind, SourceSpec, SOURCE_PEAK};
pub use stft::{average_power_spectrum, binaural_spectrogram, spectral_flatness, stft_magnitude, Spectrogram, StftConfig};
pub use waveform::Waveform;
pub use window::tukey_window;
