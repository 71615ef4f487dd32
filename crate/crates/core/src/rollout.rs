//! Attention rollout.
//!
//! Each layer's attention is averaged over heads, augmented with the
//! identity and row-normalized: `Â = rownorm(mean_h(A) + I)`. Layers
//! compose as `R_k = Â_k · R_{k−1}`. The central encoder starts from
//! `rownorm(R_left + R_right)` of the two ear encoders' final rollouts.
//! A patch's relevance is the mean of its column in the final rollout.

use std::fs;
use std::path::Path;

use bast_tensor::{Float, Graph, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::PatchGrid;
use crate::error::{CoreError, Result};
use crate::model::BastModel;

/// Dense square matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.data.chunks_exact(self.n).map(|r| r.iter().sum()).collect()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for row in self.data.chunks_exact(self.n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= self.n as f64);
        out
    }

    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            let out = &mut data[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out.iter_mut().zip(&rhs.data[k * n..(k + 1) * n]) {
                    *o += a * b;
                }
            }
        }
        Matrix { n, data }
    }

    fn row_normalized(mut self) -> Matrix {
        let n = self.n;
        for row in self.data.chunks_exact_mut(n) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        self
    }
}

/// `rownorm(mean over heads + I)` of a `[heads, N, N]` attention tensor.
pub fn layer_rollout<T: Float>(attn: &Tensor<T>) -> Result<Matrix> {
    let &[heads, n, m] = attn.shape() else {
        return Err(CoreError::Input(format!("expected [heads, N, N], got {:?}", attn.shape())));
    };
    if n != m || heads == 0 {
        return Err(CoreError::Input(format!("attention must be square, got {:?}", attn.shape())));
    }
    let mut data = vec![0.0; n * n];
    for h in attn.data().chunks_exact(n * n) {
        for (d, v) in data.iter_mut().zip(h) {
            *d += v.as_f64();
        }
    }
    data.iter_mut().for_each(|v| *v /= heads as f64);
    for i in 0..n {
        data[i * n + i] += 1.0;
    }
    Ok(Matrix { n, data }.row_normalized())
}

/// Cumulative rollouts `R_1..R_K` starting from `init` (the identity when
/// `None`).
pub fn cumulative_rollout<T: Float>(layers: &[Tensor<T>], init: Option<Matrix>) -> Result<Vec<Matrix>> {
    let mut out = Vec::with_capacity(layers.len());
    let mut r = init;
    for a in layers {
        let a_hat = layer_rollout(a)?;
        let next = match &r {
            Some(prev) if prev.n != a_hat.n => {
                return Err(CoreError::Input(format!("layer size {} after {}", a_hat.n, prev.n)))
            }
            Some(prev) => a_hat.matmul(prev),
            None => a_hat,
        };
        out.push(next.clone());
        r = Some(next);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct EncoderRollout {
    /// Per-layer `[heads, N, N]` attention.
    pub raw: Vec<Tensor<f32>>,
    /// Per-layer cumulative rollout.
    pub cumulative: Vec<Matrix>,
}

impl EncoderRollout {
    pub fn last(&self) -> Option<&Matrix> {
        self.cumulative.last()
    }
}

#[derive(Clone, Debug)]
pub struct RolloutRecord {
    pub grid: PatchGrid,
    pub left: EncoderRollout,
    pub right: EncoderRollout,
    pub central: EncoderRollout,
    /// `rownorm(R_left + R_right)`, the central encoder's starting point.
    pub central_init: Matrix,
    /// Column means of each final rollout, row-major `n_h × n_t`.
    pub left_relevance: Vec<f64>,
    pub right_relevance: Vec<f64>,
    pub central_relevance: Vec<f64>,
}

fn sum_normalized(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Matrix { n: a.n, data }.row_normalized()
}

/// Builds a record from captured per-layer attention, each `[heads, N, N]`.
pub fn rollout_from_attention(
    grid: PatchGrid,
    left: Vec<Tensor<f32>>,
    right: Vec<Tensor<f32>>,
    central: Vec<Tensor<f32>>,
) -> Result<RolloutRecord> {
    if left.is_empty() || right.is_empty() || central.is_empty() {
        return Err(CoreError::Input("attention capture is missing for at least one encoder".into()));
    }
    let l = cumulative_rollout(&left, None)?;
    let r = cumulative_rollout(&right, None)?;
    let init = sum_normalized(l.last().expect("nonempty"), r.last().expect("nonempty"));
    let c = cumulative_rollout(&central, Some(init.clone()))?;
    if init.n != grid.len() {
        return Err(CoreError::Input(format!("rollout size {} but grid has {} patches", init.n, grid.len())));
    }
    let rel = |m: &Vec<Matrix>| m.last().expect("nonempty").column_means();
    Ok(RolloutRecord {
        grid,
        left_relevance: rel(&l),
        right_relevance: rel(&r),
        central_relevance: rel(&c),
        central_init: init,
        left: EncoderRollout { raw: left, cumulative: l },
        right: EncoderRollout { raw: right, cumulative: r },
        central: EncoderRollout { raw: central, cumulative: c },
    })
}

/// Slice `b` of a `[batch, heads, N, N]` tensor.
fn batch_item<T: Float>(t: &Tensor<T>, b: usize) -> Tensor<f32> {
    let s = t.shape();
    let per: usize = s[1..].iter().product();
    Tensor::new(&s[1..], t.data()[b * per..(b + 1) * per].iter().map(|v| v.as_f32()).collect())
        .expect("slice extents")
}

/// Eval-mode forward pass with one rollout record per batch element.
pub fn bast_rollout<T: Float>(model: &BastModel<T>, left: &Tensor<T>, right: &Tensor<T>) -> Result<Vec<RolloutRecord>> {
    let mut g = Graph::inference();
    let pass = model.forward::<ChaCha8Rng>(&mut g, left, right, None)?;
    let batch = left.shape()[0];
    (0..batch)
        .map(|b| {
            let take = |vars: &[bast_tensor::Var]| vars.iter().map(|&v| batch_item(g.value(v), b)).collect();
            rollout_from_attention(
                *model.grid(),
                take(&pass.left_attention),
                take(&pass.right_attention),
                take(&pass.central_attention),
            )
        })
        .collect()
}

/// Nearest-patch upsampling of an `n_h × n_t` grid to `h × t`: each cell
/// takes the value of the patch whose centre is closest along each axis.
pub fn upsample_nearest(grid: &PatchGrid, values: &[f64], h: usize, t: usize) -> Vec<f64> {
    let centre = |i: usize| i as f64 * grid.stride as f64 + (grid.patch as f64 - 1.0) / 2.0;
    let nearest = |x: usize, n: usize| {
        (0..n)
            .min_by(|&a, &b| (centre(a) - x as f64).abs().total_cmp(&(centre(b) - x as f64).abs()))
            .expect("grid is nonempty")
    };
    let rows: Vec<usize> = (0..h).map(|r| nearest(r, grid.n_h)).collect();
    let cols: Vec<usize> = (0..t).map(|c| nearest(c, grid.n_t)).collect();
    let mut out = Vec::with_capacity(h * t);
    for &i in &rows {
        out.extend(cols.iter().map(|&j| values[i * grid.n_t + j]));
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct HeatmapMeta {
    pub sample_id: String,
    pub azimuth: u16,
    pub environment: String,
    pub n_h: usize,
    pub n_t: usize,
    pub overlay_height: usize,
    pub overlay_width: usize,
}

fn write_grid(path: &Path, values: &[f64], cols: usize) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in values.chunks_exact(cols) {
        w.write_record(row.iter().map(|v| format!("{v:.9e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `rollout_<id>_<ear>.csv` patch grids, matching `_overlay.csv`
/// files at spectrogram resolution, and `rollout_<id>_meta.json`.
pub fn export_heatmap(dir: impl AsRef<Path>, record: &RolloutRecord, meta: &HeatmapMeta) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let id = &meta.sample_id;
    for (ear, rel) in [
        ("left", &record.left_relevance),
        ("right", &record.right_relevance),
        ("center", &record.central_relevance),
    ] {
        write_grid(&dir.join(format!("rollout_{id}_{ear}.csv")), rel, record.grid.n_t)?;
        let overlay = upsample_nearest(&record.grid, rel, meta.overlay_height, meta.overlay_width);
        write_grid(&dir.join(format!("rollout_{id}_{ear}_overlay.csv")), &overlay, meta.overlay_width)?;
    }
    fs::write(dir.join(format!("rollout_{id}_meta.json")), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}
