//! Binaural rendering with spherical-head cues and image-source reverb.
//!
//! Each propagation path (the direct sound plus, for a reverberant scene,
//! every image source up to the reflection order) contributes to both ears
//! with
//!
//! * a delay `r/c ± ITD/2`, where the ITD follows the Woodworth formula
//!   `(a/c)(φ + sin φ)` for the path's lateral angle `φ`;
//! * a gain `β^k / r`, with `k` wall reflections of amplitude coefficient
//!   `β = sqrt(1 - absorption)`;
//! * a zero-phase head-shadow shelf `LP + α·HP`, with `α = 1 ± depth·sin φ`
//!   (boost on the near ear, cut on the far ear);
//! * a zero-phase pinna shelf `LP + ρ·HP` with `ρ = 1 + depth·cos(front)`,
//!   which brightens frontal paths and darkens rear ones.
//!
//! Both shelves are linear in their coefficient, so the per-ear response
//! expands into four delay lines weighted by `g`, `gα`, `gρ` and `gαρ`,
//! each filtered by a fixed pair of shelf responses. Delay lines use an
//! 8-tap Hann-windowed sinc for fractional sample positions, and the whole
//! filter is applied by zero-padded FFT convolution.
//!
//! Geometry is evaluated relative to the listener so a source mirrored
//! across the median plane produces exactly negated lateral coordinates.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{AudioError, Result};
use crate::geometry::{Environment, LocalizationTarget};
use crate::waveform::Waveform;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Room extents (x, y, z) in metres; the room spans `[0, extent]`.
    pub room: [f64; 3],
    pub listener: [f64; 3],
    pub source_distance: f64,
    pub head_radius: f64,
    pub speed_of_sound: f64,
    /// Energy absorbed per wall hit, in (0, 1].
    pub absorption: f64,
    /// 0 renders the direct path only.
    pub reflection_order: u32,
    pub ild_depth: f64,
    pub pinna_depth: f64,
    pub pinna_corner_hz: f64,
    /// Applied to the rendered signal so typical scenes stay inside ±1.
    pub output_gain: f64,
}

impl SceneConfig {
    pub fn reverberant() -> Self {
        Self {
            room: [10.0, 14.0, 3.0],
            listener: [5.0, 5.0, 1.5],
            source_distance: 1.0,
            head_radius: 0.0875,
            speed_of_sound: 343.0,
            absorption: 0.3,
            reflection_order: 3,
            ild_depth: 0.9,
            pinna_depth: 0.5,
            pinna_corner_hz: 5000.0,
            output_gain: 0.25,
        }
    }

    pub fn anechoic() -> Self {
        Self {
            reflection_order: 0,
            ..Self::reverberant()
        }
    }

    pub fn for_environment(env: Environment) -> Self {
        match env {
            Environment::Anechoic => Self::anechoic(),
            Environment::Reverberant => Self::reverberant(),
        }
    }

    pub fn is_anechoic(&self) -> bool {
        self.reflection_order == 0
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            self.source_distance,
            self.head_radius,
            self.speed_of_sound,
            self.pinna_corner_hz,
        ];
        if positive.iter().any(|v| !(*v > 0.0))
            || !(self.absorption > 0.0 && self.absorption <= 1.0)
            || !(0.0..1.0).contains(&self.ild_depth)
            || !(0.0..1.0).contains(&self.pinna_depth)
        {
            return Err(AudioError::Parameter(format!("invalid scene {self:?}")));
        }
        Ok(())
    }
}

/// One propagation path, relative to the listener.
#[derive(Clone, Copy, Debug)]
struct Path {
    offset: [f64; 3],
    reflections: u32,
}

/// Per-axis image candidates `(sign, offset, reflections)`: the image
/// coordinate relative to the listener is `sign·s + offset` for a source
/// at relative coordinate `s`.
fn axis_images(extent: f64, listener: f64, order: u32) -> Vec<(f64, f64, u32)> {
    let r = order as i64;
    let mut out = Vec::new();
    for n in -r..=r + 1 {
        for p in 0..2i64 {
            let k = (2 * n - p).unsigned_abs() as u32;
            if k > order {
                continue;
            }
            let base = 2.0 * n as f64 * extent;
            if p == 0 {
                out.push((1.0, base, k));
            } else {
                out.push((-1.0, base - 2.0 * listener, k));
            }
        }
    }
    out
}

fn image_paths(rel: [f64; 3], scene: &SceneConfig) -> Vec<Path> {
    let order = scene.reflection_order;
    let axes: Vec<_> = (0..3)
        .map(|a| axis_images(scene.room[a], scene.listener[a], order))
        .collect();
    let mut paths = Vec::new();
    for &(sx, ox, kx) in &axes[0] {
        for &(sy, oy, ky) in &axes[1] {
            for &(sz, oz, kz) in &axes[2] {
                let k = kx + ky + kz;
                if k <= order {
                    paths.push(Path {
                        offset: [sx * rel[0] + ox, sy * rel[1] + oy, sz * rel[2] + oz],
                        reflections: k,
                    });
                }
            }
        }
    }
    paths
}

fn inside(p: [f64; 3], room: [f64; 3]) -> bool {
    (0..3).all(|a| p[a] > 0.0 && p[a] < room[a])
}

/// Windowed-sinc fractional delay: adds `gain · h(n - delay)` for the 8
/// taps around `delay`, wrapping circularly.
fn add_delayed_impulse(buf: &mut [Complex<f64>], delay: f64, gain: f64) {
    const HALF: i64 = 4;
    let n = buf.len() as i64;
    let base = delay.floor() as i64;
    for i in base - HALF + 1..=base + HALF {
        let t = i as f64 - delay;
        let sinc = if t == 0.0 { 1.0 } else { (PI * t).sin() / (PI * t) };
        let w = 0.5 * (1.0 + (PI * t / HALF as f64).cos());
        buf[i.rem_euclid(n) as usize].re += gain * sinc * w;
    }
}

/// Renders a mono source at `target` into a two-channel waveform (left
/// first) of the same length.
pub fn render_binaural(src: &Waveform, target: &LocalizationTarget, scene: &SceneConfig) -> Result<Waveform> {
    scene.validate()?;
    if src.num_channels() != 1 {
        return Err(AudioError::Input(format!(
            "source must be mono, got {} channels",
            src.num_channels()
        )));
    }
    if !inside(scene.listener, scene.room) {
        return Err(AudioError::Geometry(format!(
            "listener {:?} outside room {:?}",
            scene.listener, scene.room
        )));
    }
    let [cx, cy] = target.coordinate;
    let rel = [scene.source_distance * cx, scene.source_distance * cy, 0.0];
    let absolute = [0, 1, 2].map(|a| scene.listener[a] + rel[a]);
    if !inside(absolute, scene.room) {
        return Err(AudioError::Geometry(format!(
            "source {absolute:?} outside room {:?}",
            scene.room
        )));
    }

    let fs = src.sample_rate() as f64;
    let c = scene.speed_of_sound;
    let a = scene.head_radius;
    let beta = (1.0 - scene.absorption).sqrt();
    let paths = image_paths(rel, scene);

    struct Tap {
        delay: [f64; 2],
        gain: f64,
        alpha: [f64; 2],
        rho: f64,
    }
    let taps: Vec<Tap> = paths
        .iter()
        .map(|p| {
            let [dx, dy, dz] = p.offset;
            let r = (dx * dx + dy * dy + dz * dz).sqrt();
            let lateral = dx / r;
            let front = dy / r;
            let itd = a / c * (lateral.asin() + lateral);
            let base = r / c;
            Tap {
                delay: [(base + itd / 2.0) * fs, (base - itd / 2.0) * fs],
                gain: beta.powi(p.reflections as i32) / r,
                alpha: [1.0 - scene.ild_depth * lateral, 1.0 + scene.ild_depth * lateral],
                rho: 1.0 + scene.pinna_depth * front,
            }
        })
        .collect();

    let len = src.len();
    let max_delay = taps
        .iter()
        .flat_map(|t| t.delay)
        .fold(0.0f64, f64::max);
    let nfft = (len + max_delay.ceil() as usize + 16).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);

    let mut x: Vec<Complex<f64>> = (0..nfft)
        .map(|i| Complex::new(src.channel(0).get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fwd.process(&mut x);

    // real, even shelf responses per bin
    let shelves: Vec<[f64; 4]> = (0..nfft)
        .map(|k| {
            let f = k.min(nfft - k) as f64 * fs / nfft as f64;
            let uh = PI * f * a / c;
            let up = f / scene.pinna_corner_hz;
            let (hp_h, hp_p) = (uh * uh / (1.0 + uh * uh), up * up / (1.0 + up * up));
            let (lp_h, lp_p) = (1.0 - hp_h, 1.0 - hp_p);
            // weights for the g, gα, gρ, gαρ lines
            [lp_h * lp_p, hp_h * lp_p, lp_h * hp_p, hp_h * hp_p]
        })
        .collect();

    let mut channels = Vec::with_capacity(2);
    for ear in 0..2 {
        let mut lines = vec![vec![Complex::new(0.0, 0.0); nfft]; 4];
        for t in &taps {
            let al = t.alpha[ear];
            let weights = [t.gain, t.gain * al, t.gain * t.rho, t.gain * al * t.rho];
            for (line, w) in lines.iter_mut().zip(weights) {
                add_delayed_impulse(line, t.delay[ear], w);
            }
        }
        for line in &mut lines {
            fwd.process(line);
        }
        let mut y: Vec<Complex<f64>> = (0..nfft)
            .map(|k| {
                let h: Complex<f64> = (0..4).map(|j| lines[j][k] * shelves[k][j]).sum();
                h * x[k]
            })
            .collect();
        inv.process(&mut y);
        let scale = scene.output_gain / nfft as f64;
        channels.push(y[..len].iter().map(|v| v.re * scale).collect());
    }
    Waveform::new(channels, src.sample_rate())
}

/// Lag in samples, within `±max_lag`, that maximizes the cross-correlation
/// `Σ left[n]·right[n - lag]`. Positive values mean the left ear lags.
pub fn interaural_lag(w: &Waveform, max_lag: usize) -> Result<i64> {
    if w.num_channels() != 2 {
        return Err(AudioError::Input("interaural lag needs two channels".into()));
    }
    let (l, r) = (w.channel(0), w.channel(1));
    let n = l.len() as i64;
    let m = max_lag as i64;
    let mut best = (f64::NEG_INFINITY, 0i64);
    for lag in -m..=m {
        let lo = lag.max(0);
        let hi = n.min(n + lag);
        let s: f64 = (lo..hi).map(|i| l[i as usize] * r[(i - lag) as usize]).sum();
        // ties resolve toward the smallest magnitude lag
        if s > best.0 || (s == best.0 && lag.abs() < best.1.abs()) {
            best = (s, lag);
        }
    }
    Ok(best.1)
}
