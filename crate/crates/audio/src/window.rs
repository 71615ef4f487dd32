use std::f64::consts::PI;

use crate::error::{AudioError, Result};

/// Symmetric Tukey (tapered cosine) window.
///
/// `shape` is the fraction of the window inside the cosine tapers: 0 gives a
/// rectangular window and 1 a Hann window. Endpoints are 0 whenever
/// `shape > 0`.
pub fn tukey_window(length: usize, shape: f64) -> Result<Vec<f64>> {
    if length < 2 {
        return Err(AudioError::Parameter(format!(
            "window length must be at least 2, got {length}"
        )));
    }
    if !(0.0..=1.0).contains(&shape) {
        return Err(AudioError::Parameter(format!(
            "Tukey shape must lie in [0, 1], got {shape}"
        )));
    }
    if shape == 0.0 {
        return Ok(vec![1.0; length]);
    }
    let m = (length - 1) as f64;
    let edge = shape * m / 2.0;
    Ok((0..length)
        .map(|n| {
            let n = n as f64;
            // taper mirrored about the centre
            let d = n.min(m - n);
            if d < edge {
                0.5 * (1.0 + (PI * (d / edge - 1.0)).cos())
            } else {
                1.0
            }
        })
        .collect())
}
