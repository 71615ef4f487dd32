//! Short-time Fourier magnitudes and the binaural feature pair.
//!
//! Spectrogram rows are frequency bins (row 0 is DC) and columns are frames,
//! stored row-major. Frames start at multiples of the hop with no leading
//! padding.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{AudioError, Result};
use crate::waveform::Waveform;
use crate::window::tukey_window;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub nfft: usize,
    pub tukey_shape: f64,
    /// Zero-pad the tail of the signal when it would otherwise produce
    /// fewer frames than this.
    pub min_frames: Option<usize>,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 256,
            hop: 128,
            nfft: 256,
            tukey_shape: 0.25,
            min_frames: Some(61),
        }
    }
}

impl StftConfig {
    pub fn num_bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    /// Frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        let natural = if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        };
        natural.max(self.min_frames.unwrap_or(0))
    }

    fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.window_len < 2 || self.nfft < self.window_len {
            return Err(AudioError::Parameter(format!(
                "need hop > 0 and 2 <= window <= nfft, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Nonnegative magnitude grid of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    bins: usize,
    frames: usize,
    data: Vec<f32>,
    bin_hz: f64,
    hop: usize,
}

impl Spectrogram {
    pub fn new(bins: usize, frames: usize, data: Vec<f32>, bin_hz: f64, hop: usize) -> Result<Self> {
        if data.len() != bins * frames {
            return Err(AudioError::Input(format!(
                "{} values for a {bins}x{frames} spectrogram",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(AudioError::Input("spectrogram entries must be finite and nonnegative".into()));
        }
        Ok(Self {
            bins,
            frames,
            data,
            bin_hz,
            hop,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.bins, self.frames)
    }

    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, bin: usize, frame: usize) -> f32 {
        self.data[bin * self.frames + frame]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|&x| f64::from(x) * f64::from(x)).sum()
    }
}

/// Frame-wise complex spectra (`frames × (nfft/2+1)`) of a windowed signal.
fn frame_spectra(signal: &[f64], cfg: &StftConfig) -> Result<Vec<Vec<Complex<f64>>>> {
    cfg.validate()?;
    if signal.len() < cfg.window_len {
        return Err(AudioError::Input(format!(
            "signal of {} samples is shorter than the {}-sample window",
            signal.len(),
            cfg.window_len
        )));
    }
    let window = tukey_window(cfg.window_len, cfg.tukey_shape)?;
    let fft = FftPlanner::new().plan_fft_forward(cfg.nfft);
    let bins = cfg.num_bins();
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.nfft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    (0..cfg.num_frames(signal.len()))
        .map(|f| {
            let start = f * cfg.hop;
            buf.fill(Complex::new(0.0, 0.0));
            for (k, w) in window.iter().enumerate() {
                let x = signal.get(start + k).copied().unwrap_or(0.0);
                buf[k] = Complex::new(x * w, 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            Ok(buf[..bins].to_vec())
        })
        .collect()
}

pub fn stft_magnitude(signal: &[f64], sample_rate: u32, cfg: &StftConfig) -> Result<Spectrogram> {
    if signal.iter().any(|x| !x.is_finite()) {
        return Err(AudioError::Input("non-finite sample".into()));
    }
    let spectra = frame_spectra(signal, cfg)?;
    let frames = spectra.len();
    let bins = cfg.num_bins();
    let mut data = vec![0f32; bins * frames];
    for (f, spec) in spectra.iter().enumerate() {
        for (b, c) in spec.iter().enumerate() {
            data[b * frames + f] = c.norm() as f32;
        }
    }
    Spectrogram::new(bins, frames, data, sample_rate as f64 / cfg.nfft as f64, cfg.hop)
}

/// Left and right magnitude spectrograms of a two-channel waveform.
pub fn binaural_spectrogram(w: &Waveform, cfg: &StftConfig) -> Result<(Spectrogram, Spectrogram)> {
    if w.num_channels() != 2 {
        return Err(AudioError::Input(format!(
            "binaural input needs 2 channels, got {}",
            w.num_channels()
        )));
    }
    Ok((
        stft_magnitude(w.channel(0), w.sample_rate(), cfg)?,
        stft_magnitude(w.channel(1), w.sample_rate(), cfg)?,
    ))
}

/// Welch-averaged power spectrum: mean of |X|² over frames, one value per
/// bin.
pub fn average_power_spectrum(signal: &[f64], cfg: &StftConfig) -> Result<Vec<f64>> {
    let spectra = frame_spectra(signal, cfg)?;
    let mut acc = vec![0.0; cfg.num_bins()];
    for spec in &spectra {
        for (a, c) in acc.iter_mut().zip(spec) {
            *a += c.norm_sqr();
        }
    }
    let n = spectra.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Geometric over arithmetic mean of a power spectrum, ignoring the DC and
/// Nyquist bins. 1 for a perfectly flat spectrum.
pub fn spectral_flatness(power: &[f64]) -> f64 {
    let inner = &power[1..power.len() - 1];
    let n = inner.len() as f64;
    let floor = 1e-300;
    let log_mean = inner.iter().map(|p| p.max(floor).ln()).sum::<f64>() / n;
    let mean = inner.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return 0.0;
    }
    log_mean.exp() / mean
}
