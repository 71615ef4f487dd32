use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// How the left and right encoder outputs are merged before the central
/// encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integration {
    Concat,
    Add,
    /// Right minus left.
    Sub,
}

impl Integration {
    pub const ALL: [Integration; 3] = [Integration::Add, Integration::Sub, Integration::Concat];

    pub fn name(self) -> &'static str {
        match self {
            Integration::Concat => "concat",
            Integration::Add => "add",
            Integration::Sub => "sub",
        }
    }
}

impl fmt::Display for Integration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Integration {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown integration mode `{s}`")))
    }
}

/// Whether the two ear pathways share weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sharing {
    #[serde(rename = "SP")]
    Shared,
    #[serde(rename = "NSP")]
    Separate,
}

impl Sharing {
    pub const ALL: [Sharing; 2] = [Sharing::Separate, Sharing::Shared];

    pub fn tag(self) -> &'static str {
        match self {
            Sharing::Shared => "SP",
            Sharing::Separate => "NSP",
        }
    }
}

impl fmt::Display for Sharing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Sharing {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SP" | "sp" => Ok(Sharing::Shared),
            "NSP" | "nsp" => Ok(Sharing::Separate),
            _ => Err(CoreError::Config(format!("unknown sharing mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Frequency bins per spectrogram.
    pub height: usize,
    /// Frames per spectrogram.
    pub width: usize,
    pub patch: usize,
    pub stride: usize,
    pub dim: usize,
    /// Blocks per encoder.
    pub layers: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub dropout: f64,
    pub integration: Integration,
    pub sharing: Sharing,
}

impl ModelConfig {
    pub fn canonical(integration: Integration, sharing: Sharing) -> Self {
        Self {
            height: 129,
            width: 61,
            patch: 16,
            stride: 6,
            dim: 1024,
            layers: 3,
            heads: 16,
            mlp_dim: 1024,
            dropout: 0.2,
            integration,
            sharing,
        }
    }

    /// Small model used for desk-scale experiments.
    pub fn desk(integration: Integration, sharing: Sharing) -> Self {
        Self {
            dim: 128,
            layers: 1,
            heads: 4,
            mlp_dim: 256,
            dropout: 0.0,
            ..Self::canonical(integration, sharing)
        }
    }

    /// Width of the central encoder.
    pub fn central_dim(&self) -> usize {
        match self.integration {
            Integration::Concat => 2 * self.dim,
            Integration::Add | Integration::Sub => self.dim,
        }
    }

    pub fn grid(&self) -> Result<PatchGrid> {
        patch_counts(self.height, self.width, self.patch, self.stride)
    }

    pub fn num_patches(&self) -> Result<usize> {
        self.grid().map(|g| g.len())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CoreError::Config(msg));
        if self.dim == 0 || self.heads == 0 || self.mlp_dim == 0 || self.patch == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.dim % self.heads != 0 || self.central_dim() % self.heads != 0 {
            return bad(format!("dim {} is not divisible by {} heads", self.dim, self.heads));
        }
        if self.dim % 4 != 0 {
            return bad(format!(
                "dim {} must be a multiple of 4 for the 2-D sinusoidal position table",
                self.dim
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        self.grid()?;
        Ok(())
    }

    /// Trainable scalars implied by the configuration.
    pub fn parameter_count(&self) -> usize {
        let embed = self.patch * self.patch * self.dim + self.dim;
        let ear = encoder_params(self.dim, self.mlp_dim, self.layers);
        let central = encoder_params(self.central_dim(), self.mlp_dim, self.layers);
        let head = self.central_dim() * 2 + 2;
        let pathways = match self.sharing {
            Sharing::Shared => 1,
            Sharing::Separate => 2,
        };
        pathways * (embed + ear) + central + head
    }
}

fn encoder_params(d: usize, m: usize, layers: usize) -> usize {
    // q, k, v, o projections; two-layer MLP; two norms; then a final norm
    let block = 4 * (d * d + d) + (d * m + m) + (m * d + d) + 4 * d;
    layers * block + 2 * d
}

/// Patch layout of one spectrogram. Patch `(i, j)` covers frequency rows
/// `i·S .. i·S + P` and frames `j·S .. j·S + P` of the zero-padded grid;
/// padding is appended at the high-frequency and late-time edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub n_h: usize,
    pub n_t: usize,
    pub pad_top: usize,
    pub pad_right: usize,
    pub patch: usize,
    pub stride: usize,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.n_h * self.n_t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sequence position of patch `(i, j)`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_t + j
    }

    /// Half-open row and column ranges covered by sequence position `k`.
    pub fn extent(&self, k: usize) -> ((usize, usize), (usize, usize)) {
        let (i, j) = (k / self.n_t, k % self.n_t);
        let (r, c) = (i * self.stride, j * self.stride);
        ((r, r + self.patch), (c, c + self.patch))
    }
}

/// Patch counts `N = ceil((L - P + S) / S)` per axis, with the zero padding
/// needed for the last patch to fit.
pub fn patch_counts(h: usize, t: usize, p: usize, s: usize) -> Result<PatchGrid> {
    if p == 0 || s == 0 {
        return Err(CoreError::Config("patch size and stride must be positive".into()));
    }
    let axis = |len: usize, name: &str| -> Result<(usize, usize)> {
        let span = (len + s).checked_sub(p).filter(|&v| v > 0).ok_or_else(|| {
            CoreError::Config(format!(
                "{name} extent {len} cannot hold a {p}-wide patch at stride {s}"
            ))
        })?;
        let n = span.div_ceil(s);
        Ok((n, (n - 1) * s + p - len))
    };
    let (n_h, pad_top) = axis(h, "frequency")?;
    let (n_t, pad_right) = axis(t, "time")?;
    Ok(PatchGrid {
        n_h,
        n_t,
        pad_top,
        pad_right,
        patch: p,
        stride: s,
    })
}
