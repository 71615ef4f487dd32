use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AudioError, Result};
use crate::waveform::Waveform;

pub const SOURCE_PEAK: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    WhiteNoise,
    ToneComplex,
    AmNoise,
    Chirp,
}

impl SourceKind {
    pub const ALL: [SourceKind; 4] = [
        SourceKind::WhiteNoise,
        SourceKind::ToneComplex,
        SourceKind::AmNoise,
        SourceKind::Chirp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SourceKind::WhiteNoise => "white-noise",
            SourceKind::ToneComplex => "tone-complex",
            SourceKind::AmNoise => "am-noise",
            SourceKind::Chirp => "chirp",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SourceKind {
    type Err = AudioError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| AudioError::Parameter(format!("unknown source kind `{s}`")))
    }
}

/// A named, reproducible source sound.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceSpec {
    pub id: String,
    pub kind: SourceKind,
    pub seed: u64,
}

impl SourceSpec {
    pub fn render(&self, duration_secs: f64, sample_rate: u32) -> Result<Waveform> {
        make_source(self.kind, duration_secs, sample_rate, self.seed)
    }
}

/// `count` sources cycling through every kind, with ids `{prefix}{i:03}`
/// and seeds derived from `seed`.
pub fn source_pool(prefix: &str, count: usize, seed: u64) -> Vec<SourceSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| SourceSpec {
            id: format!("{prefix}{i:03}"),
            kind: SourceKind::ALL[i % SourceKind::ALL.len()],
            seed: rng.random(),
        })
        .collect()
}

/// Deterministic mono source, peak-normalized to [`SOURCE_PEAK`].
pub fn make_source(kind: SourceKind, duration_secs: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    if !(duration_secs > 0.0) || sample_rate == 0 {
        return Err(AudioError::Parameter(format!(
            "need positive duration and rate, got {duration_secs} s at {sample_rate} Hz"
        )));
    }
    let n = (duration_secs * sample_rate as f64).round() as usize;
    if n < 2 {
        return Err(AudioError::Parameter("source shorter than two samples".into()));
    }
    let fs = sample_rate as f64;
    let nyquist = fs / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = match kind {
        SourceKind::WhiteNoise => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        SourceKind::ToneComplex => {
            let f0 = rng.random_range(150.0..600.0);
            let top = 0.47 * fs;
            let partials: Vec<(f64, f64, f64)> = (1..)
                .map(|k| k as f64 * f0)
                .take_while(|&f| f < top)
                .enumerate()
                .map(|(k, f)| (f, rng.random_range(0.5..1.0) / (k as f64 + 1.0).sqrt(), rng.random_range(0.0..2.0 * PI)))
                .collect();
            (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    partials.iter().map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum()
                })
                .collect()
        }
        SourceKind::AmNoise => {
            let rate = rng.random_range(4.0..16.0);
            let depth = rng.random_range(0.5..1.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    let e = 1.0 + depth * (2.0 * PI * rate * t + phase).sin();
                    e * rng.sample::<f64, _>(StandardNormal)
                })
                .collect()
        }
        SourceKind::Chirp => {
            let f_lo: f64 = rng.random_range(100.0..500.0);
            let f_hi: f64 = rng.random_range(0.375 * nyquist..0.9375 * nyquist);
            let phase = rng.random_range(0.0..2.0 * PI);
            let dur = n as f64 / fs;
            let k = (f_hi / f_lo).ln() / dur;
            // exponential sweep: f(t) = f_lo·e^{kt}
            (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    (2.0 * PI * f_lo * ((k * t).exp() - 1.0) / k + phase).sin()
                })
                .collect()
        }
    };
    if matches!(kind, SourceKind::ToneComplex | SourceKind::Chirp) {
        apply_ramps(&mut x, (0.01 * fs) as usize);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = SOURCE_PEAK / peak;
        x.iter_mut().for_each(|v| *v *= g);
    }
    Waveform::mono(x, sample_rate)
}

/// Raised-cosine onset and offset of `len` samples.
fn apply_ramps(x: &mut [f64], len: usize) {
    let len = len.min(x.len() / 2);
    let n = x.len();
    for i in 0..len {
        let g = 0.5 * (1.0 - (PI * i as f64 / len as f64).cos());
        x[i] *= g;
        x[n - 1 - i] *= g;
    }
}
